use super::{missing_cache, LayerKind, Mode, Module, Param, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{he_uniform_init, matmul_t, orthogonal_init, Rng, Scalar, Tensor};

/// Fully-connected layer `y = xW + b` with `W: D_in×D_out`.
pub struct Affine<T: Scalar = f32> {
    params: [Param<T>; 2],
    mode: Mode,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Affine<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, d_out) = weight.dims2()?;
        if bias.shape() != [d_out] {
            return Err(Error::dim(format!(
                "affine bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self {
            params: [
                Param::new("weight", ParamRole::Weight, weight),
                Param::new("bias", ParamRole::Bias, bias),
            ],
            mode: Mode::Train,
            cache: None,
        })
    }

    /// Uniform He initialization with fan-in `d_in`, zero bias.
    pub fn he(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        // `he_uniform_init` takes fan-in from the trailing extents, so draw
        // in the `D_out×D_in` layout and transpose.
        let w = he_uniform_init::<T>(&[d_out, d_in], rng).transpose().expect("matrix");
        Self::new(w, Tensor::zeros(&[d_out])).expect("consistent shapes")
    }

    /// Orthogonal initialization (gain 1), zero bias.
    pub fn orthogonal(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let w = orthogonal_init::<T>(&[d_in, d_out], rng);
        Self::new(w, Tensor::zeros(&[d_out])).expect("consistent shapes")
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.params[0].value
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.params[1].value
    }

    pub fn in_dim(&self) -> usize {
        self.weight().shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight().shape()[1]
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d_in) = x.dims2()?;
        if d_in != self.in_dim() {
            return Err(Error::dim(format!(
                "affine expects {} input features, got {d_in}",
                self.in_dim()
            )));
        }
        let mut y = matmul_t(x, false, self.weight(), false)?;
        let d_out = self.out_dim();
        let b = self.bias().data();
        for row in y.data_mut().chunks_exact_mut(d_out) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(y)
    }
}

impl<T: Scalar> Module<T> for Affine<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Affine
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x)
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let y = self.apply(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("affine"))?;
        let (b, d_out) = grad_out.dims2()?;
        if b != x.shape()[0] || d_out != self.out_dim() {
            return Err(Error::dim(format!(
                "affine backward: grad {:?} vs cached input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let dw = matmul_t(x, true, grad_out, false)?;
        self.params[0].grad.add_assign(&dw)?;
        let db = self.params[1].grad.data_mut();
        for row in grad_out.data().chunks_exact(d_out) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        matmul_t(grad_out, false, &self.params[0].value, true)
    }

    fn params(&self) -> &[Param<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    fn hyper(&self) -> serde_json::Value {
        serde_json::json!({ "in": self.in_dim(), "out": self.out_dim() })
    }
}
