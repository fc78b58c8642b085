//! Layers with hand-written backward passes, and the training losses.
//!
//! Every layer implements [`Module`]: `forward` honours the layer's [`Mode`]
//! (train mode caches what `backward` needs, eval mode is a pure function
//! that delegates to `infer`), `backward` returns the input gradient and
//! accumulates parameter gradients.

mod activation;
mod affine;
mod batchnorm;
pub mod checkpoint;
mod conv;
mod dropout;
pub mod gradcheck;
mod l2norm;
mod loss;
mod pool;

pub use activation::{relu_forward, sigmoid_forward, Relu, Sigmoid};
pub use affine::Affine;
pub use batchnorm::{BatchNorm, BatchNormConfig};
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use l2norm::{l2_normalize_forward, L2Norm, L2_EPS};
pub use loss::{multitask_cross_entropy, MultiTaskTargets};
pub use pool::{Flatten, MaxPool2d};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Affine,
    Conv2d,
    Batchnorm1d,
    Batchnorm2d,
    Relu,
    Sigmoid,
    Dropout,
    L2norm,
    Maxpool2d,
    Flatten,
}

/// What a parameter does; lets the optimizer exempt normalization
/// parameters from weight decay when asked to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar = f32> {
    pub name: &'static str,
    pub role: ParamRole,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: &'static str, role: ParamRole, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name,
            role,
            value,
            grad,
        }
    }
}

pub trait Module<T: Scalar>: Send + Sync {
    fn kind(&self) -> LayerKind;

    fn mode(&self) -> Mode;

    fn set_mode(&mut self, mode: Mode);

    /// Eval-mode forward; never touches layer state.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Train-mode forward; caches whatever `backward` needs.
    fn forward_train(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn forward(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        match self.mode() {
            Mode::Train => self.forward_train(x, rng),
            Mode::Eval => self.infer(x),
        }
    }

    fn params(&self) -> &[Param<T>] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut []
    }

    /// Non-trainable state saved with checkpoints (batchnorm running stats).
    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Mode-independent hyperparameters, for checkpoint manifests.
    fn hyper(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }
}

pub(crate) fn missing_cache(kind: &str) -> Error {
    Error::State(format!("{kind}: backward called without a cached train-mode forward"))
}

/// A chain of layers applied in order.
#[derive(Default)]
pub struct Sequential<T: Scalar = f32> {
    layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Module<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn layers(&self) -> &[Box<dyn Module<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Module<T>>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.layers.iter_mut().for_each(|l| l.set_mode(mode));
    }

    pub fn forward(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, rng)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(|l| l.zero_grad());
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_chains_and_collects_params() {
        let mut rng = Rng::new(0);
        let mut seq = Sequential::<f64>::new();
        seq.push(Affine::he(3, 4, &mut rng))
            .push(Relu::new())
            .push(Affine::he(4, 2, &mut rng));
        assert_eq!(seq.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        let x = Tensor::<f64>::ones(&[5, 3]);
        let y = seq.forward(&x, &mut rng).unwrap();
        assert_eq!(y.shape(), &[5, 2]);
        let g = seq.backward(&Tensor::ones(&[5, 2])).unwrap();
        assert_eq!(g.shape(), &[5, 3]);
        seq.set_mode(Mode::Eval);
        assert_eq!(seq.infer(&x).unwrap(), y);
    }
}
