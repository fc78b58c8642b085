use serde::{Deserialize, Serialize};

use super::{split_rows, RepresentationTable};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SapParams {
    pub train_fraction: f64,
}

impl Default for SapParams {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

/// Best single threshold on the train rows for the binary target `pos`,
/// maximizing Youden's J (`TPR − FPR`) over both orientations. Returns
/// `(threshold, sign)`: predict positive when `sign·(z − threshold) > 0`.
fn fit_threshold(values: &[f64], pos: &[bool]) -> (f64, f64) {
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    let n_neg = pos.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // sweep thresholds between distinct sorted values; "below" = predicted
    // positive for sign −1
    let (mut tp_below, mut fp_below) = (0.0, 0.0);
    let mut best = (0.0, f64::NEG_INFINITY, 1.0);
    for r in 0..order.len() {
        if pos[order[r]] {
            tp_below += 1.0;
        } else {
            fp_below += 1.0;
        }
        if r + 1 < order.len() && values[order[r]] == values[order[r + 1]] {
            continue;
        }
        let threshold = if r + 1 < order.len() {
            0.5 * (values[order[r]] + values[order[r + 1]])
        } else {
            values[order[r]]
        };
        let j_below = tp_below / n_pos - fp_below / n_neg;
        if j_below > best.1 {
            best = (threshold, j_below, -1.0);
        }
        if -j_below > best.1 {
            best = (threshold, -j_below, 1.0);
        }
    }
    (best.0, best.2)
}

fn youden(values: &[f64], pos: &[bool], threshold: f64, sign: f64) -> f64 {
    let (mut tp, mut fp, mut n_pos, mut n_neg) = (0.0, 0.0, 0.0, 0.0);
    for (&v, &p) in values.iter().zip(pos) {
        let predicted = sign * (v - threshold) > 0.0;
        if p {
            n_pos += 1.0;
            tp += predicted as u8 as f64;
        } else {
            n_neg += 1.0;
            fp += predicted as u8 as f64;
        }
    }
    tp / n_pos - fp / n_neg
}

/// Chance-corrected predictability of factor `k` from dim `j`: the mean over
/// the ordinal boundaries `v ≤ c` of the test-split Youden's J of the
/// train-fitted threshold, clamped to `[0, 1]`.
fn predictability(table: &RepresentationTable, j: usize, k: usize, train: &[usize], test: &[usize]) -> Option<f64> {
    let card = table.spec().factors()[k].cardinality;
    let z_tr: Vec<f64> = train.iter().map(|&i| table.code(i, j)).collect();
    let z_te: Vec<f64> = test.iter().map(|&i| table.code(i, j)).collect();
    let mut sum = 0.0;
    let mut used = 0;
    for c in 0..card - 1 {
        let p_tr: Vec<bool> = train.iter().map(|&i| table.factor(i, k) <= c).collect();
        let p_te: Vec<bool> = test.iter().map(|&i| table.factor(i, k) <= c).collect();
        let both = |p: &[bool]| p.iter().any(|&x| x) && p.iter().any(|&x| !x);
        if !both(&p_tr) || !both(&p_te) {
            continue;
        }
        let (t, s) = fit_threshold(&z_tr, &p_tr);
        sum += youden(&z_te, &p_te, t, s);
        used += 1;
    }
    (used > 0).then(|| (sum / used as f64).clamp(0.0, 1.0))
}

/// Mean over factors of the gap between the two most predictive dims.
pub fn sap(table: &RepresentationTable, params: &SapParams, rng: &mut Rng) -> Result<f64> {
    let (train, test) = split_rows(table.len(), params.train_fraction, rng)?;
    let f = table.spec().len();
    let mut total = 0.0;
    for k in 0..f {
        let mut scores = Vec::with_capacity(table.dims());
        for j in 0..table.dims() {
            match predictability(table, j, k, &train, &test) {
                Some(s) => scores.push(s),
                None => {
                    return Err(Error::DegenerateSplit(format!(
                        "factor `{}` has no class boundary present on both sides of the split",
                        table.spec().factors()[k].name
                    )))
                }
            }
        }
        scores.sort_by(|a, b| b.total_cmp(a));
        total += scores[0] - scores.get(1).copied().unwrap_or(0.0);
    }
    Ok((total / f as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorSpec;
    use crate::tensor::Tensor;

    #[test]
    fn threshold_fit_separates() {
        let v = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let p = [false, false, false, true, true, true];
        let (t, s) = fit_threshold(&v, &p);
        assert!((t - 0.5).abs() < 1e-12 && s == 1.0);
        assert_eq!(youden(&v, &p, t, s), 1.0);
        let flipped: Vec<bool> = p.iter().map(|x| !x).collect();
        let (t, s) = fit_threshold(&v, &flipped);
        assert_eq!(youden(&v, &flipped, t, s), 1.0);
    }

    #[test]
    fn identical_dims_give_zero() {
        let spec = FactorSpec::new([("a", 3), ("b", 2)]).unwrap();
        let rows: Vec<Vec<usize>> = (0..60).map(|i| vec![i % 3, (i / 3) % 2]).collect();
        let codes = Tensor::from_vec(&[60, 3], rows.iter().flat_map(|r| [r[0] as f32; 3]).collect()).unwrap();
        let t = RepresentationTable::new(&codes, rows, spec).unwrap();
        assert_eq!(sap(&t, &SapParams::default(), &mut Rng::new(0)).unwrap(), 0.0);
    }

    #[test]
    fn tiny_table_is_degenerate() {
        let spec = FactorSpec::new([("a", 2)]).unwrap();
        let codes = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        let t = RepresentationTable::new(&codes, vec![vec![0], vec![1]], spec).unwrap();
        assert!(matches!(
            sap(&t, &SapParams::default(), &mut Rng::new(0)),
            Err(Error::DegenerateSplit(_))
        ));
    }
}
