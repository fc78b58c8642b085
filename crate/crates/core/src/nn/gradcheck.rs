//! Central finite-difference gradient checks (f64).
//!
//! The scalar probed is `L = Σ y ⊙ R` for a fixed random `R`, so
//! `∂L/∂y = R` is fed to `backward` and every input and parameter entry is
//! compared against `(L(θ+h) − L(θ−h)) / 2h`.

use super::Module;
use crate::error::Result;
use crate::tensor::{Rng, Tensor};

/// Absolute error below which an entry counts as exact, whatever its size.
/// Two f64 loss evaluations at `h = 1e-5` carry roughly `1e-16/h` of
/// round-off each.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub entries: usize,
}

impl GradCheckReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.entries += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error {
            self.max_rel_error = e;
            self.worst = format!("{}: analytic {analytic:e}, numeric {numeric:e}", what());
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.entries += other.entries;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// `|a − n| / max(|a|, |n|)`, or 0 when the two agree to within [`ABS_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

fn probe(layer: &mut dyn Module<f64>, x: &Tensor<f64>, r: &Tensor<f64>, seed: u64) -> Result<f64> {
    let y = layer.forward_train(x, &mut Rng::new(seed))?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of `layer` at `x`. `seed` fixes any
/// randomness inside the forward pass (dropout masks) across evaluations.
pub fn check_layer(layer: &mut dyn Module<f64>, x: &Tensor<f64>, seed: u64, h: f64) -> Result<GradCheckReport> {
    let y = layer.forward_train(x, &mut Rng::new(seed))?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.normal()).collect())?;
    layer.zero_grad();
    let dx = layer.backward(&r)?;
    let param_grads: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::default();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let lp = probe(layer, &xp, &r, seed)?;
        xp.data_mut()[i] = orig - h;
        let lm = probe(layer, &xp, &r, seed)?;
        xp.data_mut()[i] = orig;
        report.record(|| format!("input[{i}]"), dx.data()[i], (lp - lm) / (2.0 * h));
    }
    for (pi, grad) in param_grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = layer.params()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = orig + h;
            let lp = probe(layer, x, &r, seed)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig - h;
            let lm = probe(layer, x, &r, seed)?;
            layer.params_mut()[pi].value.data_mut()[j] = orig;
            let name = layer.params()[pi].name;
            report.record(|| format!("{name}[{j}]"), grad.data()[j], (lp - lm) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Finite-difference gradient of a scalar function of one tensor.
pub fn numeric_gradient(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut xp = x.clone();
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let lp = f(&xp);
        xp.data_mut()[i] = orig - h;
        let lm = f(&xp);
        xp.data_mut()[i] = orig;
        g.data_mut()[i] = (lp - lm) / (2.0 * h);
    }
    g
}

/// Compares two gradient tensors entrywise with [`relative_error`].
pub fn compare(label: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        report.record(|| format!("{label}[{i}]"), a, n);
    }
    report
}
