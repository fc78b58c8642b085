use super::{missing_cache, LayerKind, Mode, Module};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// 2×2 max pooling with stride 2.
pub struct MaxPool2d<T: Scalar = f32> {
    mode: Mode,
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Default for MaxPool2d<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> MaxPool2d<T> {
    pub fn new() -> Self {
        Self {
            mode: Mode::Train,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    /// Output plus, for every output cell, the flat index of the winning input.
    fn pool(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (b, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("maxpool needs even spatial extents, got {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        let d = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::from_vec(&[b, c, oh, ow], out)?, arg))
    }
}

impl<T: Scalar> Module<T> for MaxPool2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Maxpool2d
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Self::pool(x)?.0)
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let (y, arg) = Self::pool(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool2d"))?;
        if grad_out.len() != arg.len() {
            return Err(Error::dim("maxpool backward: gradient shape mismatch"));
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

/// Reshapes `B×…` to `B×(product of the rest)`.
pub struct Flatten {
    mode: Mode,
    input_shape: Option<Vec<usize>>,
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

impl Flatten {
    pub fn new() -> Self {
        Self {
            mode: Mode::Train,
            input_shape: None,
        }
    }
}

impl<T: Scalar> Module<T> for Flatten {
    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        x.clone().reshape(&[b, x.len() / b])
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        self.input_shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        grad_out.clone().reshape(shape)
    }
}
