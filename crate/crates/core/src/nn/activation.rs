use super::{missing_cache, LayerKind, Mode, Module};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

#[derive(Default)]
pub struct Relu<T: Scalar = f32> {
    mode: Mode,
    cache: Option<Tensor<T>>,
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Train
    }
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self {
            mode: Mode::Train,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for Relu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu_forward(x))
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let y = relu_forward(x);
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or_else(|| missing_cache("relu"))?;
        grad_out.zip_map(y, |g, y| if y > T::zero() { g } else { T::zero() })
    }
}

#[derive(Default)]
pub struct Sigmoid<T: Scalar = f32> {
    mode: Mode,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self {
            mode: Mode::Train,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for Sigmoid<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Sigmoid
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(sigmoid_forward(x))
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let y = sigmoid_forward(x);
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or_else(|| missing_cache("sigmoid"))?;
        if y.shape() != grad_out.shape() {
            return Err(Error::dim("sigmoid backward: gradient shape mismatch"));
        }
        grad_out.zip_map(y, |g, y| g * y * (T::one() - y))
    }
}
