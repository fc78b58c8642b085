use serde::{Deserialize, Serialize};

use super::{split_rows, RepresentationTable};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DciParams {
    pub train_fraction: f64,
    /// L1 penalty on the classifier weights (per-sample loss scale).
    pub l1: f64,
    pub iterations: usize,
}

impl Default for DciParams {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            l1: 1e-3,
            iterations: 1500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
}

/// `D×K` weights and `K` biases of a multinomial logistic regression.
struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    k: usize,
}

impl Linear {
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, w) in out.iter_mut().zip(&self.w[j * self.k..(j + 1) * self.k]) {
                    *o += xj * w;
                }
            }
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let mut l = vec![0.0; self.k];
        self.logits(x, &mut l);
        (0..self.k).fold(0, |best, c| if l[c] > l[best] { c } else { best })
    }
}

fn softmax_in_place(l: &mut [f64]) {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in l.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    l.iter_mut().for_each(|v| *v /= s);
}

/// Accelerated proximal gradient (FISTA) on mean cross-entropy plus
/// `l1·Σ|W|`; the bias is not penalized.
fn fit_l1_logistic(x: &[Vec<f64>], y: &[usize], k: usize, params: &DciParams) -> Linear {
    let (n, d) = (x.len(), x[0].len());
    // Lipschitz bound of the gradient: ½·(trace of the Gram matrix incl. bias)/n
    let trace = x
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum::<f64>()
        / n as f64;
    let step = 1.0 / (0.5 * trace);
    let mut cur = Linear {
        w: vec![0.0; d * k],
        b: vec![0.0; k],
        k,
    };
    let mut prev_w = cur.w.clone();
    let mut prev_b = cur.b.clone();
    let mut look = Linear {
        w: cur.w.clone(),
        b: cur.b.clone(),
        k,
    };
    let mut t = 1.0f64;
    let mut p = vec![0.0; k];
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    for _ in 0..params.iterations {
        gw.fill(0.0);
        gb.fill(0.0);
        for (xi, &yi) in x.iter().zip(y) {
            look.logits(xi, &mut p);
            softmax_in_place(&mut p);
            p[yi] -= 1.0;
            for c in 0..k {
                gb[c] += p[c];
            }
            for (j, &xj) in xi.iter().enumerate() {
                if xj != 0.0 {
                    for c in 0..k {
                        gw[j * k + c] += xj * p[c];
                    }
                }
            }
        }
        let shrink = step * params.l1;
        for i in 0..d * k {
            let v = look.w[i] - step * gw[i] / n as f64;
            cur.w[i] = v.signum() * (v.abs() - shrink).max(0.0);
        }
        for c in 0..k {
            cur.b[c] = look.b[c] - step * gb[c] / n as f64;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for i in 0..d * k {
            look.w[i] = cur.w[i] + mom * (cur.w[i] - prev_w[i]);
        }
        for c in 0..k {
            look.b[c] = cur.b[c] + mom * (cur.b[c] - prev_b[c]);
        }
        prev_w.copy_from_slice(&cur.w);
        prev_b.copy_from_slice(&cur.b);
        t = t_next;
    }
    cur
}

fn normalized_entropy(p: &[f64], base: usize) -> f64 {
    if base < 2 {
        return 0.0;
    }
    let s: f64 = p.iter().sum();
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let q = v / s;
            q * q.ln()
        })
        .sum::<f64>()
        / (base as f64).ln()
}

/// Disentanglement and completeness from a `dims × factors` importance
/// matrix (row-major): importance-weighted means of one minus the normalized
/// entropy of each row (over factors) and each column (over dims).
pub fn dci_from_importance(r: &[f64], dims: usize, factors: usize) -> Result<(f64, f64)> {
    if r.len() != dims * factors || r.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Metric(
            "importance matrix must be finite, non-negative and dims×factors".into(),
        ));
    }
    let total: f64 = r.iter().sum();
    if total <= 0.0 {
        return Err(Error::Metric(
            "importance matrix is all zero; entropies are undefined".into(),
        ));
    }
    let mut dis = 0.0;
    for j in 0..dims {
        let row = &r[j * factors..(j + 1) * factors];
        let w: f64 = row.iter().sum();
        if w > 0.0 {
            dis += w * (1.0 - normalized_entropy(row, factors));
        }
    }
    let mut comp = 0.0;
    for k in 0..factors {
        let col: Vec<f64> = (0..dims).map(|j| r[j * factors + k]).collect();
        let w: f64 = col.iter().sum();
        if w > 0.0 {
            comp += w * (1.0 - normalized_entropy(&col, dims));
        }
    }
    Ok(((dis / total).clamp(0.0, 1.0), (comp / total).clamp(0.0, 1.0)))
}

/// DCI with L1-regularized multinomial logistic regression on codes
/// standardized with train-split statistics.
pub fn dci(table: &RepresentationTable, params: &DciParams, rng: &mut Rng) -> Result<DciScores> {
    if params.iterations == 0 || !(params.l1 >= 0.0) {
        return Err(Error::Config("dci needs iterations > 0 and l1 >= 0".into()));
    }
    let (train, test) = split_rows(table.len(), params.train_fraction, rng)?;
    let d = table.dims();
    let (mut mean, mut std) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..d {
        let v: Vec<f64> = train.iter().map(|&i| table.code(i, j)).collect();
        mean[j] = v.iter().sum::<f64>() / v.len() as f64;
        std[j] = (v.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    }
    let scale = std.iter().copied().fold(0.0, f64::max);
    let standardize = |i: usize| -> Vec<f64> {
        (0..d)
            .map(|j| {
                if std[j] > super::ZERO_VARIANCE_RTOL * scale && std[j] > 0.0 {
                    (table.code(i, j) - mean[j]) / std[j]
                } else {
                    0.0
                }
            })
            .collect()
    };
    let x_tr: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();
    let x_te: Vec<Vec<f64>> = test.iter().map(|&i| standardize(i)).collect();
    let f = table.spec().len();
    let mut importance = vec![0.0; d * f];
    let mut accuracy = 0.0;
    for (k, factor) in table.spec().factors().iter().enumerate() {
        let y_tr: Vec<usize> = train.iter().map(|&i| table.factor(i, k)).collect();
        let model = fit_l1_logistic(&x_tr, &y_tr, factor.cardinality, params);
        for j in 0..d {
            let row = &model.w[j * model.k..(j + 1) * model.k];
            importance[j * f + k] = row.iter().map(|w| w.abs()).sum::<f64>() / model.k as f64;
        }
        let correct = test
            .iter()
            .zip(&x_te)
            .filter(|(&i, xi)| model.predict(xi) == table.factor(i, k))
            .count();
        accuracy += correct as f64 / test.len() as f64;
    }
    let (dis, comp) = dci_from_importance(&importance, d, f)?;
    Ok(DciScores {
        disentanglement: dis,
        completeness: comp,
        informativeness: accuracy / f as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diagonal_and_uniform_importance() {
        let r = [2.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(dci_from_importance(&r, 3, 3).unwrap(), (1.0, 1.0));
        let (d, _) = dci_from_importance(&[1.0; 12], 4, 3).unwrap();
        assert!(d.abs() < 1e-12);
        assert!(dci_from_importance(&[0.0; 6], 3, 2).is_err());
    }

    #[test]
    fn one_dim_per_two_factors_halves_disentanglement() {
        // one dim carrying two factors equally: entropy log 2 over base 2
        let (d, c) = dci_from_importance(&[1.0, 1.0], 1, 2).unwrap();
        assert!(d.abs() < 1e-12);
        assert_eq!(c, 1.0);
    }

    #[test]
    fn logistic_fit_separates_classes() {
        let x: Vec<Vec<f64>> = (0..90)
            .map(|i| vec![(i % 3) as f64 - 1.0, ((i * 7) % 5) as f64 / 5.0])
            .collect();
        let y: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let m = fit_l1_logistic(&x, &y, 3, &DciParams::default());
        let acc = x.iter().zip(&y).filter(|(xi, &yi)| m.predict(xi) == yi).count();
        assert_eq!(acc, 90);
        // irrelevant second feature stays near zero
        let w_rel: f64 = m.w[..3].iter().map(|w| w.abs()).sum();
        let w_irr: f64 = m.w[3..].iter().map(|w| w.abs()).sum();
        assert!(w_irr < 0.05 * w_rel, "{w_irr} vs {w_rel}");
    }
}
