use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RepresentationTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigParams {
    pub bins: usize,
}

impl Default for MigParams {
    fn default() -> Self {
        Self { bins: 20 }
    }
}

/// Equal-count discretization. A value goes to bin `⌊r·bins/N⌋` where `r` is
/// the rank of its first occurrence in sorted order, so equal values always
/// share a bin. The result depends only on the ordering of the values.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for r in 0..n {
        if r > 0 && values[order[r]] != values[order[r - 1]] {
            first = r;
        }
        out[order[r]] = first * bins / n;
    }
    out
}

/// Plug-in entropy (nats) of a discrete sample.
pub fn entropy(x: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in x {
        *counts.entry(v).or_default() += 1;
    }
    let n = x.len() as f64;
    let mut keys: Vec<_> = counts.into_iter().collect();
    keys.sort_unstable();
    -keys
        .iter()
        .map(|&(_, c)| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Plug-in mutual information (nats) of two paired discrete samples.
pub fn mutual_info(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pa: HashMap<usize, usize> = HashMap::new();
    let mut pb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *pa.entry(x).or_default() += 1;
        *pb.entry(y).or_default() += 1;
    }
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .iter()
        .map(|&((x, y), c)| {
            let pxy = c as f64 / n;
            pxy * (c as f64 * n / (pa[&x] * pb[&y]) as f64).ln()
        })
        .sum();
    mi.max(0.0)
}

/// `I(z_j; v_k)` for every code dim `j` and factor `k`. Constant dims are
/// skipped with a warning and come back as `None`.
pub fn mutual_info_matrix(table: &RepresentationTable, params: &MigParams) -> Result<Vec<Option<Vec<f64>>>> {
    if params.bins < 2 {
        return Err(Error::Config("mig needs at least 2 bins".into()));
    }
    if table.len() < params.bins {
        return Err(Error::Metric(format!(
            "{} rows cannot fill {} equal-count bins",
            table.len(),
            params.bins
        )));
    }
    let constant = table.zero_variance_dims();
    let factors: Vec<Vec<usize>> = (0..table.spec().len()).map(|k| table.factor_column(k)).collect();
    Ok((0..table.dims())
        .map(|j| {
            if constant.contains(&j) {
                log::warn!("code dimension {j} is constant; excluded from mutual information");
                return None;
            }
            let z = discretize(&table.column(j), params.bins);
            Some(factors.iter().map(|v| mutual_info(&z, v)).collect())
        })
        .collect())
}

/// Mean over factors of `(I_top − I_second) / H(v_k)`.
pub fn mig(table: &RepresentationTable, params: &MigParams) -> Result<f64> {
    let mi = mutual_info_matrix(table, params)?;
    let f = table.spec().len();
    let mut total = 0.0;
    for k in 0..f {
        let h = entropy(&table.factor_column(k));
        if h <= 0.0 {
            return Err(Error::Metric(format!(
                "factor `{}` takes a single value",
                table.spec().factors()[k].name
            )));
        }
        let mut col: Vec<f64> = mi.iter().flatten().map(|row| row[k]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let top = col.first().copied().unwrap_or(0.0);
        let second = col.get(1).copied().unwrap_or(0.0);
        total += ((top - second) / h).clamp(0.0, 1.0);
    }
    Ok(total / f as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorSpec;
    use crate::tensor::Tensor;

    #[test]
    fn equal_values_share_bins() {
        let b = discretize(&[3.0, 1.0, 1.0, 2.0, 1.0, 5.0], 3);
        assert_eq!(b[1], b[2]);
        assert_eq!(b[2], b[4]);
        assert!(b[1] < b[3] && b[3] <= b[0] && b[0] <= b[5]);
        let even = discretize(&(0..100).map(|i| i as f64).collect::<Vec<_>>(), 20);
        for bin in 0..20 {
            assert_eq!(even.iter().filter(|&&v| v == bin).count(), 5);
        }
    }

    #[test]
    fn information_identities() {
        let x = [0, 1, 2, 3, 0, 1, 2, 3];
        assert!((entropy(&x) - 4f64.ln()).abs() < 1e-12);
        assert!((mutual_info(&x, &x) - 4f64.ln()).abs() < 1e-12);
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        assert!(mutual_info(&x, &y).abs() < 1e-12);
    }

    #[test]
    fn duplicated_perfect_dims_have_zero_gap() {
        let spec = FactorSpec::new([("a", 4)]).unwrap();
        let labels: Vec<Vec<usize>> = (0..40).map(|i| vec![i % 4]).collect();
        let codes = Tensor::from_vec(
            &[40, 2],
            labels.iter().flat_map(|r| [r[0] as f32, r[0] as f32]).collect(),
        )
        .unwrap();
        let t = RepresentationTable::new(&codes, labels, spec).unwrap();
        assert_eq!(mig(&t, &MigParams { bins: 10 }).unwrap(), 0.0);
    }
}
