//! RAdam (rectified Adam) with optional weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Param, ParamRole};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RAdamConfig {
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the parameters instead of adding it to the gradient.
    #[serde(default)]
    pub decoupled_decay: bool,
    /// Whether batchnorm scale/shift parameters are decayed too.
    #[serde(default = "yes")]
    pub decay_norm_params: bool,
}

fn yes() -> bool {
    true
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled_decay: false,
            decay_norm_params: true,
        }
    }
}

impl RAdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(Error::Config(format!(
                "RAdam betas must lie in [0, 1): beta1={}, beta2={}",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr >= 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "RAdam lr, eps and weight decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Which update an RAdam step applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepBranch {
    /// Variance estimate not yet tractable: plain bias-corrected momentum.
    Unrectified,
    Rectified,
}

/// Length of the approximated simple moving average, `ρ_t`.
pub fn rho(beta2: f64, t: u64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Optimizer state: step counter and per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct RAdam<T: Scalar = f32> {
    config: RAdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(config: RAdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &RAdamConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update over `params` (same parameters, same order, every call).
    pub fn step<'a, I>(&mut self, params: I) -> Result<StepBranch>
    where
        I: IntoIterator<Item = &'a mut Param<T>>,
    {
        let mut params: Vec<&mut Param<T>> = params.into_iter().collect();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if params.len() != self.m.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, step received {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad.shape() != self.m[i].shape() || p.value.shape() != self.m[i].shape() {
                return Err(Error::dim(format!("parameter #{i} ({}) changed shape", p.name)));
            }
            if !p.grad.all_finite() {
                return Err(Error::NonFiniteGradient(format!("{}#{i}", p.name)));
            }
        }

        self.step += 1;
        let t = self.step;
        let c = &self.config;
        let (b1, b2) = (c.beta1, c.beta2);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho(b2, t);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let branch = if rho_t > 4.0 {
            StepBranch::Rectified
        } else {
            StepBranch::Unrectified
        };
        debug_assert_eq!(branch == StepBranch::Unrectified, rho_t <= 4.0);
        let rect = match branch {
            StepBranch::Rectified => {
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
            }
            StepBranch::Unrectified => 0.0,
        };

        let lr = T::lit(c.lr);
        let one = T::one();
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let inv_bias1 = T::lit(1.0 / bias1);
        let inv_bias2 = T::lit(1.0 / bias2);
        let eps = T::lit(c.eps);
        let step_rect = T::lit(c.lr * rect);

        for (i, p) in params.iter_mut().enumerate() {
            let decays = c.weight_decay > 0.0
                && (c.decay_norm_params || !matches!(p.role, ParamRole::NormScale | ParamRole::NormShift));
            let wd = T::lit(if decays { c.weight_decay } else { 0.0 });
            let coupled = !c.decoupled_decay;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for j in 0..value.len() {
                let mut g = grad[j];
                if coupled {
                    g += wd * value[j];
                } else {
                    value[j] -= lr * wd * value[j];
                }
                m[j] = b1t * m[j] + (one - b1t) * g;
                v[j] = b2t * v[j] + (one - b2t) * g * g;
                let m_hat = m[j] * inv_bias1;
                match branch {
                    StepBranch::Rectified => {
                        let v_hat = (v[j] * inv_bias2).sqrt();
                        value[j] -= step_rect * m_hat / (v_hat + eps);
                    }
                    StepBranch::Unrectified => value[j] -= lr * m_hat,
                }
            }
        }
        Ok(branch)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "optimizer": "radam",
            "step": self.step,
            "config": self.config,
        }));
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ck.add_tensor(&format!("m.{i}"), m.cast());
            ck.add_tensor(&format!("v.{i}"), v.cast());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: RAdamConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let step = ck.meta["step"]
            .as_u64()
            .ok_or_else(|| Error::header("step", "missing optimizer step"))?;
        let map = ck.tensor_map();
        let n = ck.tensors.len() / 2;
        let mut opt = Self::new(config)?;
        opt.step = step;
        for i in 0..n {
            let get = |k: &str| {
                map.get(format!("{k}.{i}").as_str())
                    .map(|t| t.cast::<T>())
                    .ok_or_else(|| Error::format(0, format!("missing optimizer tensor {k}.{i}")))
            };
            opt.m.push(get("m")?);
            opt.v.push(get("v")?);
        }
        Ok(opt)
    }
}
