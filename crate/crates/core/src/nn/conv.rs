use super::{missing_cache, LayerKind, Mode, Module, Param, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::conv::conv2d_batch;
use crate::tensor::{col2im, he_uniform_init, Rng, Scalar, Tensor};

struct ConvCache<T> {
    cols: Tensor<T>,
    input_shape: [usize; 4],
}

/// 2-D convolution (cross-correlation) over `B×C×H×W` batches.
pub struct Conv2d<T: Scalar = f32> {
    params: [Param<T>; 2],
    stride: usize,
    padding: usize,
    mode: Mode,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let (c_out, _, k, k2) = weight.dims4()?;
        if k != k2 {
            return Err(Error::dim("only square kernels are supported"));
        }
        if bias.shape() != [c_out] {
            return Err(Error::dim("conv bias must have one entry per output channel"));
        }
        if stride == 0 {
            return Err(Error::dim("stride must be positive"));
        }
        Ok(Self {
            params: [
                Param::new("weight", ParamRole::Weight, weight),
                Param::new("bias", ParamRole::Bias, bias),
            ],
            stride,
            padding,
            mode: Mode::Train,
            cache: None,
        })
    }

    /// Uniform He initialization (fan-in `c_in·k·k`), zero bias.
    pub fn he(c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, rng: &mut Rng) -> Self {
        let w = he_uniform_init::<T>(&[c_out, c_in, k, k], rng);
        Self::new(w, Tensor::zeros(&[c_out]), stride, padding).expect("consistent shapes")
    }

    pub fn kernel(&self) -> usize {
        self.params[0].value.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.params[0].value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.params[0].value.shape()[0]
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, _) = conv2d_batch(
            x,
            &self.params[0].value,
            &self.params[1].value,
            self.stride,
            self.padding,
        )?;
        Ok(y)
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let (y, cols) = conv2d_batch(
            x,
            &self.params[0].value,
            &self.params[1].value,
            self.stride,
            self.padding,
        )?;
        let (b, c, h, w) = x.dims4()?;
        self.cache = Some(ConvCache {
            cols,
            input_shape: [b, c, h, w],
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (b, c_out, oh, ow) = grad_out.dims4()?;
        let plane = oh * ow;
        let ncols = b * plane;
        if c_out != self.out_channels() || cache.cols.shape()[1] != ncols {
            return Err(Error::dim(format!(
                "conv2d backward: grad {:?} does not match cached forward",
                grad_out.shape()
            )));
        }
        // Rearrange the gradient to [c_out × (B·H'·W')] to match the columns.
        let g = grad_out.data();
        let mut g2 = vec![T::zero(); c_out * ncols];
        for bi in 0..b {
            for co in 0..c_out {
                let src = &g[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
                g2[co * ncols + bi * plane..co * ncols + (bi + 1) * plane].copy_from_slice(src);
            }
        }
        let kk = cache.cols.shape()[0];
        // dW += g2 · colsᵀ
        T::gemm(
            c_out,
            ncols,
            kk,
            T::one(),
            &g2,
            ncols as isize,
            1,
            cache.cols.data(),
            1,
            ncols as isize,
            T::one(),
            self.params[0].grad.data_mut(),
            kk as isize,
            1,
        );
        let db = self.params[1].grad.data_mut();
        for co in 0..c_out {
            db[co] += g2[co * ncols..(co + 1) * ncols].iter().copied().sum::<T>();
        }
        // dcols = Wᵀ · g2
        let mut dcols = vec![T::zero(); kk * ncols];
        T::gemm(
            kk,
            c_out,
            ncols,
            T::one(),
            self.params[0].value.data(),
            1,
            kk as isize,
            &g2,
            ncols as isize,
            1,
            T::zero(),
            &mut dcols,
            ncols as isize,
            1,
        );
        let dcols = Tensor::from_vec(&[kk, ncols], dcols)?;
        col2im(&dcols, cache.input_shape, self.kernel(), self.stride, self.padding)
    }

    fn params(&self) -> &[Param<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    fn hyper(&self) -> serde_json::Value {
        serde_json::json!({
            "in_channels": self.in_channels(),
            "out_channels": self.out_channels(),
            "kernel": self.kernel(),
            "stride": self.stride,
            "padding": self.padding,
        })
    }
}
