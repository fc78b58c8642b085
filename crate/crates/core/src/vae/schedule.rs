use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise cosine annealing of the KLD weight over training epochs:
/// constant `beta_start` before `t_start`, a half cosine up to `beta_end` at
/// `t_end`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub t_start: usize,
    pub t_end: usize,
    pub epochs: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta_start: 0.005,
            beta_end: 0.4,
            t_start: 10,
            t_end: 79,
            epochs: 120,
        }
    }
}

impl BetaSchedule {
    pub fn appendix_b() -> Self {
        Self {
            beta_start: 0.001,
            beta_end: 0.4,
            t_start: 10,
            t_end: 49,
            epochs: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.t_start > self.t_end || self.t_end >= self.epochs {
            return Err(Error::Config(format!(
                "schedule needs 0 <= t_start <= t_end <= N-1, got t_start={} t_end={} N={}",
                self.t_start, self.t_end, self.epochs
            )));
        }
        if !(self.beta_start.is_finite() && self.beta_end.is_finite()) || self.beta_start > self.beta_end {
            return Err(Error::Config(format!(
                "schedule needs finite beta_start <= beta_end, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// β for epoch `t`. The endpoints are returned exactly.
    pub fn beta_at(&self, t: usize) -> Result<f64> {
        if t >= self.epochs {
            return Err(Error::Config(format!(
                "epoch {t} outside schedule of {} epochs",
                self.epochs
            )));
        }
        Ok(self.value_at(t as f64))
    }

    /// The schedule as a function of continuous time, without range checks.
    pub fn value_at(&self, t: f64) -> f64 {
        let (ts, te) = (self.t_start as f64, self.t_end as f64);
        if t >= te {
            return self.beta_end;
        }
        if t <= ts {
            return self.beta_start;
        }
        let phase = PI * (t - ts) / (te - ts);
        self.beta_end - 0.5 * (self.beta_end - self.beta_start) * (1.0 + phase.cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let s = BetaSchedule::default();
        assert_eq!(s.beta_at(5).unwrap(), 0.005);
        assert_eq!(s.beta_at(10).unwrap(), 0.005);
        assert_eq!(s.beta_at(79).unwrap(), 0.4);
        assert_eq!(s.beta_at(119).unwrap(), 0.4);
        assert!((s.beta_at(45).unwrap() - 0.20700).abs() < 1e-5);
        assert!(s.beta_at(120).is_err());
    }

    #[test]
    fn degenerate_window_is_a_step() {
        let s = BetaSchedule {
            t_start: 4,
            t_end: 4,
            epochs: 8,
            ..Default::default()
        };
        assert_eq!(s.beta_at(3).unwrap(), 0.005);
        assert_eq!(s.beta_at(4).unwrap(), 0.4);
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut s = BetaSchedule::default();
        s.t_end = 120;
        assert!(s.validate().is_err());
        let mut s = BetaSchedule::default();
        s.beta_start = 0.5;
        assert!(s.validate().is_err());
        assert!(BetaSchedule::appendix_b().validate().is_ok());
    }
}
