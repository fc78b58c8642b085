use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::reparameterize;
use super::model::{VaeArch, VaeModel};
use super::schedule::BetaSchedule;
use crate::error::{Error, Result};
use crate::extractor::FeatureSet;
use crate::nn::{BatchNormConfig, Mode};
use crate::optim::{RAdam, RAdamConfig};
use crate::tensor::{Rng, Tensor};

/// Named VAE configurations.
///
/// | preset       | hidden | enc | dec | C  | N   | β window        | B   |
/// |--------------|--------|-----|-----|----|-----|-----------------|-----|
/// | `main`       | 4096   | 1   | 4   | 18 | 120 | 0.005→0.4, 10–79 | 256 |
/// | `appendix-b` | 1024   | 4   | 4   | 16 | 100 | 0.001→0.4, 10–49 | 256 |
/// | `desk`       | 1024   | 1   | 4   | 18 | 120 | 0.005→0.4, 10–79 | 64  |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaePreset {
    Main,
    AppendixB,
    Desk,
}

impl FromStr for VaePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Self::Main),
            "appendix-b" => Ok(Self::AppendixB),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (main, appendix-b, desk)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: RAdamConfig,
    pub schedule: BetaSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            optimizer: RAdamConfig::default(),
            schedule: BetaSchedule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("vae batch size must be at least 2 (batchnorm)".into()));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub arch: VaeArch,
    pub train: TrainConfig,
}

impl VaeConfig {
    pub fn preset(preset: VaePreset) -> Self {
        let arch = |hidden, encoder_layers, latent| VaeArch {
            input_dim: 512,
            hidden,
            encoder_layers,
            decoder_layers: 4,
            latent,
            batchnorm: BatchNormConfig::default(),
        };
        match preset {
            VaePreset::Main => Self {
                arch: arch(4096, 1, 18),
                train: TrainConfig::default(),
            },
            VaePreset::AppendixB => Self {
                arch: arch(1024, 4, 16),
                train: TrainConfig {
                    schedule: BetaSchedule::appendix_b(),
                    ..TrainConfig::default()
                },
            },
            VaePreset::Desk => Self {
                arch: arch(1024, 1, 18),
                train: TrainConfig {
                    batch_size: 64,
                    ..TrainConfig::default()
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    pub mse: f64,
    pub kld: f64,
    pub total: f64,
}

/// Per-epoch training trace, stored as line-delimited JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// Mean squared distance of the rows of `x` to their mean: the reconstruction
/// error of the best constant predictor under `mse_term`.
pub fn constant_predictor_mse(x: &Tensor<f32>) -> Result<f64> {
    let (n, d) = x.dims2()?;
    let mut mean = vec![0.0f64; d];
    for row in x.data().chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let sq: f64 = x
        .data()
        .chunks_exact(d)
        .map(|row| row.iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>())
        .sum();
    Ok(sq / n as f64)
}

/// Stateful VAE training loop. After a divergence the model holds the
/// parameters of the last finite epoch.
pub struct VaeTrainer {
    config: VaeConfig,
    model: VaeModel<f32>,
    history: TrainHistory,
}

impl VaeTrainer {
    pub fn new(config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Rng::new(config.train.seed).fork(0);
        Ok(Self {
            model: VaeModel::new(&config.arch, &mut init)?,
            config: config.clone(),
            history: TrainHistory::default(),
        })
    }

    pub fn model(&self) -> &VaeModel<f32> {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn into_parts(self) -> (VaeModel<f32>, TrainHistory) {
        (self.model, self.history)
    }

    pub fn run(&mut self, x: &Tensor<f32>) -> Result<()> {
        let (n, d) = x.dims2()?;
        if d != self.config.arch.input_dim {
            return Err(Error::dim(format!(
                "features have width {d}, vae expects {}",
                self.config.arch.input_dim
            )));
        }
        let tc = &self.config.train;
        if n < 2 {
            return Err(Error::Config("vae training needs at least 2 samples".into()));
        }
        let mut opt = RAdam::<f32>::new(RAdamConfig {
            weight_decay: 0.0,
            ..tc.optimizer.clone()
        })?;
        let root = Rng::new(tc.seed);
        let mut good = self.model.snapshot();
        for epoch in 0..tc.schedule.epochs {
            let beta = tc.schedule.beta_at(epoch)?;
            self.model.set_mode(Mode::Train);
            let order = root.fork(1 + 2 * epoch as u64).permutation(n);
            let mut rng = root.fork(2 + 2 * epoch as u64);
            let (mut mse, mut kld, mut total, mut seen) = (0.0, 0.0, 0.0, 0usize);
            for batch in order.chunks(tc.batch_size) {
                if batch.len() < 2 {
                    continue;
                }
                let xb = x.select(batch)?;
                self.model.zero_grad();
                let step = self
                    .model
                    .loss_and_grad(&xb, beta, &mut rng)
                    .and_then(|t| opt.step(self.model.params_mut()).map(|_| t));
                let terms = match step {
                    Ok(t) => t,
                    Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient(_))) => {
                        self.model.restore(&good);
                        self.model.set_mode(Mode::Eval);
                        return Err(Error::Divergence {
                            epoch,
                            last_good: epoch.checked_sub(1),
                            msg: e.to_string(),
                        });
                    }
                    Err(e) => return Err(e),
                };
                let w = batch.len() as f64;
                mse += terms.mse * w;
                kld += terms.kld * w;
                total += terms.total * w;
                seen += batch.len();
            }
            let seen = seen as f64;
            let record = EpochRecord {
                epoch,
                beta,
                mse: mse / seen,
                kld: kld / seen,
                total: total / seen,
            };
            log::info!(
                "vae epoch {epoch}: beta {beta:.5} mse {:.5} kld {:.5} total {:.5}",
                record.mse,
                record.kld,
                record.total
            );
            self.history.records.push(record);
            good = self.model.snapshot();
        }
        self.model.set_mode(Mode::Eval);
        Ok(())
    }
}

/// Trains a fresh model on the feature vectors.
pub fn train_vae(features: &FeatureSet, config: &VaeConfig) -> Result<(VaeModel<f32>, TrainHistory)> {
    features.validate()?;
    let mut trainer = VaeTrainer::new(config)?;
    trainer.run(&features.vectors)?;
    Ok(trainer.into_parts())
}

/// Eval-mode posterior means for all rows, in batches.
pub fn represent(model: &VaeModel<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, _) = x.dims2()?;
    let c = model.latent_dim();
    let mut out = Vec::with_capacity(n * c);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(1024) {
        out.extend_from_slice(model.represent(&x.select(chunk)?)?.data());
    }
    Tensor::from_vec(&[n, c], out)
}

/// One posterior sample `μ + σ·ε` per row instead of the mean.
pub fn represent_sampled(model: &VaeModel<f32>, x: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (n, _) = x.dims2()?;
    let c = model.latent_dim();
    let mut out = Vec::with_capacity(n * c);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(1024) {
        let (mu, logvar) = model.encode(&x.select(chunk)?)?;
        out.extend_from_slice(reparameterize(&mu, &logvar, rng)?.0.data());
    }
    Tensor::from_vec(&[n, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(epochs: usize) -> VaeConfig {
        VaeConfig {
            arch: VaeArch {
                input_dim: 8,
                hidden: 16,
                encoder_layers: 1,
                decoder_layers: 2,
                latent: 2,
                batchnorm: BatchNormConfig::default(),
            },
            train: TrainConfig {
                batch_size: 16,
                schedule: BetaSchedule {
                    t_start: 2,
                    t_end: epochs - 3,
                    epochs,
                    ..BetaSchedule::default()
                },
                seed: 5,
                ..TrainConfig::default()
            },
        }
    }

    /// Two latent factors rendered as bumps along an 8-d vector.
    fn toy_features(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed);
        let mut data = Vec::with_capacity(n * 8);
        for _ in 0..n {
            let (a, b) = (rng.uniform01(), rng.uniform01());
            for i in 0..8 {
                let p = i as f64 / 7.0;
                let v = if i < 4 {
                    (-(p * 2.0 - a).powi(2) * 8.0).exp()
                } else {
                    0.5 + 0.4 * (b * 3.0 + p).sin()
                };
                data.push(v as f32);
            }
        }
        Tensor::from_vec(&[n, 8], data).unwrap()
    }

    #[test]
    fn presets() {
        let b = VaeConfig::preset(VaePreset::AppendixB);
        assert_eq!(b.arch.latent, 16);
        assert_eq!(b.train.schedule.epochs, 100);
        assert_eq!(b.train.schedule.beta_start, 0.001);
        assert_eq!(b.train.schedule.t_end, 49);
        assert_eq!(b.arch.hidden, 1024);
        let m = VaeConfig::preset(VaePreset::Main);
        assert_eq!((m.arch.hidden, m.arch.latent, m.train.batch_size), (4096, 18, 256));
        assert_eq!(m.train.optimizer.lr, 1e-3);
        for p in ["main", "appendix-b", "desk"] {
            VaeConfig::preset(p.parse().unwrap()).validate().unwrap();
        }
        assert!("other".parse::<VaePreset>().is_err());
    }

    #[test]
    fn training_follows_schedule_and_beats_constant_predictor() {
        let cfg = small_config(30);
        let x = toy_features(256, 1);
        let mut t = VaeTrainer::new(&cfg).unwrap();
        t.run(&x).unwrap();
        let h = t.history();
        assert_eq!(h.records.len(), 30);
        for r in &h.records {
            assert_eq!(r.beta, cfg.train.schedule.beta_at(r.epoch).unwrap());
            assert!(r.kld >= 0.0);
            assert!((r.total - (r.mse + r.beta * r.kld)).abs() < 1e-9 * r.total.max(1.0));
        }
        assert!(h.last().unwrap().mse < constant_predictor_mse(&x).unwrap());
        let z = represent(t.model(), &x).unwrap();
        assert_eq!(z.shape(), &[256, 2]);
        assert_eq!(represent(t.model(), &x).unwrap(), z);
    }

    #[test]
    fn equal_seeds_give_identical_history() {
        let cfg = small_config(6);
        let x = toy_features(64, 2);
        let run = || {
            let mut t = VaeTrainer::new(&cfg).unwrap();
            t.run(&x).unwrap();
            t.into_parts().1
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(TrainHistory::from_jsonl(&a.to_jsonl()).unwrap(), a);
    }

    #[test]
    fn nan_input_aborts_with_divergence() {
        let cfg = small_config(6);
        let mut x = toy_features(64, 3);
        x.data_mut()[5] = f32::NAN;
        let mut t = VaeTrainer::new(&cfg).unwrap();
        let err = t.run(&x).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Divergence {
                    epoch: 0,
                    last_good: None,
                    ..
                }
            ),
            "{err}"
        );
        assert_eq!(err.exit_code(), 4);
        assert!(t.model().params().all(|p| p.value.all_finite()));
    }
}
