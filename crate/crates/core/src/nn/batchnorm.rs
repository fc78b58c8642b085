use serde::{Deserialize, Serialize};

use super::{missing_cache, LayerKind, Mode, Module, Param, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchNormConfig {
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

/// Batch normalization over the channel axis: `B×D` (1-d) or `B×C×H×W` (2-d).
pub struct BatchNorm<T: Scalar = f32> {
    params: [Param<T>; 2],
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    config: BatchNormConfig,
    spatial: bool,
    mode: Mode,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new_1d(features: usize, config: BatchNormConfig) -> Self {
        Self::build(features, config, false)
    }

    pub fn new_2d(channels: usize, config: BatchNormConfig) -> Self {
        Self::build(channels, config, true)
    }

    fn build(channels: usize, config: BatchNormConfig, spatial: bool) -> Self {
        Self {
            params: [
                Param::new("gamma", ParamRole::NormScale, Tensor::ones(&[channels])),
                Param::new("beta", ParamRole::NormShift, Tensor::zeros(&[channels])),
            ],
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            config,
            spatial,
            mode: Mode::Train,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<T> {
        &self.running_var
    }

    /// Overwrites the running statistics; variance entries must be positive.
    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        if mean.shape() != [self.channels()] || var.shape() != [self.channels()] {
            return Err(Error::dim("running statistics must have one entry per channel"));
        }
        if var.data().iter().any(|v| !(*v > T::zero())) {
            return Err(Error::State("running variance must be positive".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    pub fn gamma_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[0].value
    }

    pub fn beta_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[1].value
    }

    /// `(batch, channels, inner)` view of an input.
    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (b, c, inner) = match (self.spatial, x.shape()) {
            (false, [b, d]) => (*b, *d, 1),
            (true, [b, c, h, w]) => (*b, *c, h * w),
            _ => {
                return Err(Error::dim(format!(
                    "batchnorm{} got input of shape {:?}",
                    if self.spatial { "2d" } else { "1d" },
                    x.shape()
                )))
            }
        };
        if c != self.channels() {
            return Err(Error::dim(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        Ok((b, c, inner))
    }

    fn normalize_with(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Result<(Tensor<T>, Vec<T>)> {
        let (b, c, inner) = self.layout(x)?;
        let gamma = self.params[0].value.data();
        let beta = self.params[1].value.data();
        let mut y = vec![T::zero(); x.len()];
        let mut x_hat = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * inner;
                for i in base..base + inner {
                    let h = (x.data()[i] - mean[ci]) * inv_std[ci];
                    x_hat[i] = h;
                    y[i] = gamma[ci] * h + beta[ci];
                }
            }
        }
        Ok((Tensor::from_vec(x.shape(), y)?, x_hat))
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn kind(&self) -> LayerKind {
        if self.spatial {
            LayerKind::Batchnorm2d
        } else {
            LayerKind::Batchnorm1d
        }
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let eps = T::lit(self.config.eps);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        Ok(self.normalize_with(x, self.running_mean.data(), &inv_std)?.0)
    }

    fn forward_train(&mut self, x: &Tensor<T>, _rng: &mut Rng) -> Result<Tensor<T>> {
        let (b, c, inner) = self.layout(x)?;
        if b < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm needs at least 2 samples in train mode, got {b}"
            )));
        }
        let count = (b * inner) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        let data = x.data();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * inner;
                mean[ci] += data[base..base + inner].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * inner;
                var[ci] += data[base..base + inner]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mean[ci];
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);

        let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::lit(1.0 / (v + self.config.eps).sqrt()))
            .collect();
        let (y, x_hat) = self.normalize_with(x, &mean_t, &inv_std)?;

        let m = self.config.momentum;
        let unbias = count / (count - 1.0);
        for ci in 0..c {
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = T::lit((1.0 - m) * rm.as_f64() + m * mean[ci]);
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = T::lit((1.0 - m) * rv.as_f64() + m * var[ci] * unbias);
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            shape: x.shape().to_vec(),
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::dim("batchnorm backward: gradient shape mismatch"));
        }
        let (b, c, inner) = self.layout(grad_out)?;
        let count = T::lit((b * inner) as f64);
        let g = grad_out.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * inner;
                for i in base..base + inner {
                    sum_g[ci] += g[i];
                    sum_gx[ci] += g[i] * cache.x_hat[i];
                }
            }
        }
        let gamma = self.params[0].value.data().to_vec();
        {
            let dgamma = self.params[0].grad.data_mut();
            for ci in 0..c {
                dgamma[ci] += sum_gx[ci];
            }
        }
        {
            let dbeta = self.params[1].grad.data_mut();
            for ci in 0..c {
                dbeta[ci] += sum_g[ci];
            }
        }
        // dx = γ/σ · (g − mean(g) − x̂ · mean(g·x̂))
        let mut dx = vec![T::zero(); g.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * inner;
                let scale = gamma[ci] * cache.inv_std[ci];
                let mg = sum_g[ci] / count;
                let mgx = sum_gx[ci] / count;
                for i in base..base + inner {
                    dx[i] = scale * (g[i] - mg - cache.x_hat[i] * mgx);
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx)
    }

    fn params(&self) -> &[Param<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    fn hyper(&self) -> serde_json::Value {
        serde_json::json!({
            "channels": self.channels(),
            "momentum": self.config.momentum,
            "eps": self.config.eps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| 3.0 + 2.0 * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut bn = BatchNorm::<f64>::new_1d(4, BatchNormConfig::default());
        let x = random(&[16, 4], 1);
        let y = bn.forward(&x, &mut Rng::new(0)).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..16).map(|i| y.data()[i * 4 + c]).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let x = random(&[6, 3, 2, 2], 2);
        let mut bn = BatchNorm::<f64>::new_2d(3, BatchNormConfig::default());
        let y_train = bn.forward(&x, &mut Rng::new(0)).unwrap();
        let (mut mean, mut var) = (vec![0.0; 3], vec![0.0; 3]);
        for c in 0..3 {
            let vals: Vec<f64> = (0..6)
                .flat_map(|b| x.data()[(b * 3 + c) * 4..(b * 3 + c + 1) * 4].to_vec())
                .collect();
            mean[c] = vals.iter().sum::<f64>() / 24.0;
            var[c] = vals.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / 24.0;
        }
        bn.set_running_stats(
            Tensor::from_vec(&[3], mean).unwrap(),
            Tensor::from_vec(&[3], var).unwrap(),
        )
        .unwrap();
        bn.set_mode(Mode::Eval);
        let y_eval = bn.forward(&x, &mut Rng::new(0)).unwrap();
        for (a, b) in y_train.data().iter().zip(y_eval.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_sample_batch_rejected_in_train_mode() {
        let mut bn = BatchNorm::<f32>::new_1d(2, BatchNormConfig::default());
        let err = bn.forward(&Tensor::ones(&[1, 2]), &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(_)));
        bn.set_mode(Mode::Eval);
        assert!(bn.forward(&Tensor::ones(&[1, 2]), &mut Rng::new(0)).is_ok());
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut bn = BatchNorm::<f64>::new_1d(1, BatchNormConfig::default());
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(&x, &mut Rng::new(0)).unwrap();
        assert!((bn.running_mean().data()[0] - 0.4).abs() < 1e-12);
        // unbiased batch variance 20/3
        assert!((bn.running_var().data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        assert!(bn.running_var().data()[0] > 0.0);
    }
}
