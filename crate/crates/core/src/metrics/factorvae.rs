use serde::{Deserialize, Serialize};

use super::RepresentationTable;
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorVaeParams {
    pub votes_train: usize,
    pub votes_eval: usize,
    pub batch_per_vote: usize,
}

impl Default for FactorVaeParams {
    fn default() -> Self {
        Self {
            votes_train: 800,
            votes_eval: 400,
            batch_per_vote: 64,
        }
    }
}

/// One vote: fix a factor at a random value, draw a batch (with replacement)
/// from the rows sharing it, return `(factor, argmin_j var(z_j)/std_j²)`.
fn vote(
    table: &RepresentationTable,
    groups: &[Vec<Vec<usize>>],
    active: &[usize],
    batch: usize,
    rng: &mut Rng,
) -> (usize, usize) {
    let k = rng.below(groups.len());
    let row = rng.below(table.len());
    let rows = &groups[k][table.factor(row, k)];
    let picks: Vec<usize> = (0..batch).map(|_| rows[rng.below(rows.len())]).collect();
    let std = table.dim_std();
    let mut best = (f64::INFINITY, active[0]);
    for &j in active {
        let vals = picks.iter().map(|&i| table.code(i, j) / std[j]);
        let mean = vals.clone().sum::<f64>() / batch as f64;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / (batch - 1) as f64;
        if var < best.0 {
            best = (var, j);
        }
    }
    (k, best.1)
}

/// Held-out accuracy of the majority-vote classifier mapping the
/// least-variant (std-normalized) dim to the fixed factor. Constant dims are
/// excluded before voting.
pub fn factorvae_score(table: &RepresentationTable, params: &FactorVaeParams, rng: &mut Rng) -> Result<f64> {
    if params.batch_per_vote < 2 || params.votes_train == 0 || params.votes_eval == 0 {
        return Err(Error::Config(
            "factorvae needs batch_per_vote >= 2 and positive vote counts".into(),
        ));
    }
    let spec = table.spec();
    let mut groups: Vec<Vec<Vec<usize>>> = spec.cardinalities().iter().map(|&c| vec![Vec::new(); c]).collect();
    for i in 0..table.len() {
        for (k, g) in groups.iter_mut().enumerate() {
            g[table.factor(i, k)].push(i);
        }
    }
    for (k, g) in groups.iter().enumerate() {
        let present: Vec<&Vec<usize>> = g.iter().filter(|rows| !rows.is_empty()).collect();
        if present.len() < 2 || present.iter().any(|rows| rows.len() < 2) {
            return Err(Error::Metric(format!(
                "factor `{}` lacks two realizations with at least two rows each",
                spec.factors()[k].name
            )));
        }
    }
    let zero = table.zero_variance_dims();
    let active: Vec<usize> = (0..table.dims()).filter(|j| !zero.contains(j)).collect();
    if active.is_empty() {
        return Err(Error::Metric("all code dimensions are constant".into()));
    }
    let f = spec.len();
    let mut counts = vec![vec![0usize; f]; table.dims()];
    for _ in 0..params.votes_train {
        let (k, j) = vote(table, &groups, &active, params.batch_per_vote, rng);
        counts[j][k] += 1;
    }
    // ties resolve to the lowest factor index
    let classifier: Vec<usize> = counts
        .iter()
        .map(|c| (0..f).fold(0, |best, k| if c[k] > c[best] { k } else { best }))
        .collect();
    let correct = (0..params.votes_eval)
        .filter(|_| {
            let (k, j) = vote(table, &groups, &active, params.batch_per_vote, rng);
            classifier[j] == k
        })
        .count();
    Ok(correct as f64 / params.votes_eval as f64)
}
