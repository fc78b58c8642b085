use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-factor class labels for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskTargets {
    pub names: Vec<String>,
    /// `labels[f][i]` is the class of sample `i` for factor `f`.
    pub labels: Vec<Vec<usize>>,
}

impl MultiTaskTargets {
    pub fn new(names: Vec<String>, labels: Vec<Vec<usize>>) -> Result<Self> {
        if names.len() != labels.len() {
            return Err(Error::dim("one label vector per factor name"));
        }
        Ok(Self { names, labels })
    }

    pub fn factors(&self) -> usize {
        self.labels.len()
    }
}

/// Σ over factors of the batch-mean cross entropy. Returns the loss and the
/// gradient with respect to every logit block.
pub fn multitask_cross_entropy<T: Scalar>(
    logits: &[Tensor<T>],
    targets: &MultiTaskTargets,
) -> Result<(T, Vec<Tensor<T>>)> {
    if logits.len() != targets.factors() {
        return Err(Error::dim(format!(
            "{} logit blocks for {} factors",
            logits.len(),
            targets.factors()
        )));
    }
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (f, (block, labels)) in logits.iter().zip(&targets.labels).enumerate() {
        let (b, k) = block.dims2()?;
        if labels.len() != b {
            return Err(Error::dim(format!(
                "factor {f}: {} labels for a batch of {b}",
                labels.len()
            )));
        }
        let inv_b = T::one() / T::lit(b as f64);
        let mut grad = vec![T::zero(); b * k];
        for (i, (row, &y)) in block.data().chunks_exact(k).zip(labels).enumerate() {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    factor: targets.names.get(f).cloned().unwrap_or_else(|| f.to_string()),
                    label: y,
                    cardinality: k,
                });
            }
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            total += (log_z - row[y]) * inv_b;
            let g = &mut grad[i * k..(i + 1) * k];
            for (gj, &v) in g.iter_mut().zip(row) {
                *gj = (v - log_z).exp() * inv_b;
            }
            g[y] -= inv_b;
        }
        grads.push(Tensor::from_vec(&[b, k], grad)?);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("multitask cross entropy".into()));
    }
    Ok((total, grads))
}
