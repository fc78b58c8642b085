use super::{missing_cache, LayerKind, Mode, Module};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
/// eval mode is the identity.
pub struct Dropout<T: Scalar = f32> {
    rate: f64,
    mode: Mode,
    mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            rate,
            mode: Mode::Train,
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<T: Scalar> Module<T> for Dropout<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }

    fn forward_train(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        if self.rate == 0.0 {
            self.mask = Some(Tensor::ones(x.shape()));
            return Ok(x.clone());
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask_data = (0..x.len())
            .map(|_| if rng.bernoulli(self.rate) { T::zero() } else { keep })
            .collect();
        let mask = Tensor::from_vec(x.shape(), mask_data)?;
        let y = x.zip_map(&mask, |a, m| a * m)?;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("dropout"))?;
        grad_out.zip_map(mask, |g, m| g * m)
    }

    fn hyper(&self) -> serde_json::Value {
        serde_json::json!({ "rate": self.rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Tensor::<f32>::from_vec(&[4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let mut d = Dropout::new(0.0).unwrap();
        assert_eq!(d.forward(&x, &mut Rng::new(0)).unwrap(), x);
        let mut d = Dropout::new(0.5).unwrap();
        d.set_mode(Mode::Eval);
        assert_eq!(d.forward(&x, &mut Rng::new(0)).unwrap(), x);
    }

    #[test]
    fn drop_fraction_and_expectation() {
        let n = 1_000_000;
        let x = Tensor::<f64>::ones(&[n]);
        let mut d = Dropout::new(0.1).unwrap();
        let y = d.forward(&x, &mut Rng::new(17)).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((dropped - 0.1).abs() < 0.002, "{dropped}");
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn invalid_rate_rejected() {
        assert!(Dropout::<f32>::new(1.0).is_err());
        assert!(Dropout::<f32>::new(-0.1).is_err());
    }
}
