use super::{missing_cache, LayerKind, Mode, Module};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

pub const L2_EPS: f64 = 1e-12;

/// Divides each row of a `B×D` matrix by `max(‖row‖₂, ε)`.
pub fn l2_normalize_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(normalize(x)?.0)
}

fn normalize<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let (_, d) = x.dims2()?;
    let eps = T::lit(L2_EPS);
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.shape()[0]);
    let mut zero_rows = 0;
    for row in out.data_mut().chunks_exact_mut(d) {
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if n <= eps {
            zero_rows += 1;
        }
        let denom = n.max(eps);
        row.iter_mut().for_each(|v| *v = *v / denom);
        norms.push(n);
    }
    if zero_rows > 0 {
        log::warn!("l2 normalization: {zero_rows} row(s) with (near) zero norm left unnormalized");
    }
    Ok((out, norms))
}

pub struct L2Norm<T: Scalar = f32> {
    mode: Mode,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> Default for L2Norm<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> L2Norm<T> {
    pub fn new() -> Self {
        Self {
            mode: Mode::Train,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for L2Norm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::L2norm
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        l2_normalize_forward(x)
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let (y, norms) = normalize(x)?;
        self.cache = Some((y.clone(), norms));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, norms) = self.cache.as_ref().ok_or_else(|| missing_cache("l2norm"))?;
        if y.shape() != grad_out.shape() {
            return Err(Error::dim("l2norm backward: gradient shape mismatch"));
        }
        let d = y.shape()[1];
        let eps = T::lit(L2_EPS);
        let mut dx = grad_out.clone();
        for ((g, yr), &n) in dx
            .data_mut()
            .chunks_exact_mut(d)
            .zip(y.data().chunks_exact(d))
            .zip(norms)
        {
            if n > eps {
                // (I − y yᵀ) g / ‖x‖
                let dot: T = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for (gi, &yi) in g.iter_mut().zip(yr) {
                    *gi = (*gi - yi * dot) / n;
                }
            } else {
                g.iter_mut().for_each(|gi| *gi = *gi / eps);
            }
        }
        Ok(dx)
    }
}
