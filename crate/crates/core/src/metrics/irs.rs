use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mig::{mutual_info_matrix, MigParams};
use super::RepresentationTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrsParams {
    /// Coarsen every other factor to this many bins before grouping; `None`
    /// groups by exact realizations.
    pub other_factor_bins: Option<usize>,
    /// Groups smaller than this are ignored.
    pub min_group_size: usize,
}

impl Default for IrsParams {
    fn default() -> Self {
        Self {
            other_factor_bins: None,
            min_group_size: 1,
        }
    }
}

/// Mean over the values of factor `k` of the largest deviation of dim `j`'s
/// group means (grouped by the other factors) from the value mean.
fn interventional_deviation(table: &RepresentationTable, k: usize, j: usize, params: &IrsParams) -> Result<f64> {
    let cards = table.spec().cardinalities();
    let f = cards.len();
    let key = |i: usize| -> Vec<usize> {
        (0..f)
            .filter(|&m| m != k)
            .map(|m| {
                let v = table.factor(i, m);
                match params.other_factor_bins {
                    Some(b) if b < cards[m] => v * b / cards[m],
                    _ => v,
                }
            })
            .collect()
    };
    let mut by_value: BTreeMap<usize, BTreeMap<Vec<usize>, (f64, usize)>> = BTreeMap::new();
    for i in 0..table.len() {
        let g = by_value
            .entry(table.factor(i, k))
            .or_default()
            .entry(key(i))
            .or_insert((0.0, 0));
        g.0 += table.code(i, j);
        g.1 += 1;
    }
    let mut total = 0.0;
    for (value, groups) in &by_value {
        let (sum, count) = groups.values().fold((0.0, 0), |a, g| (a.0 + g.0, a.1 + g.1));
        let mean = sum / count as f64;
        let usable: Vec<f64> = groups
            .values()
            .filter(|g| g.1 >= params.min_group_size)
            .map(|g| g.0 / g.1 as f64)
            .collect();
        if usable.len() < 2 {
            return Err(Error::Metric(format!(
                "factor `{}` = {value}: fewer than two groups of at least {} rows under interventions",
                table.spec().factors()[k].name,
                params.min_group_size
            )));
        }
        total += usable.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
    }
    Ok(total / by_value.len() as f64)
}

/// Interventional robustness: each factor is matched to the code dim with
/// the highest mutual information; its score is one minus the interventional
/// deviation normalized by the dim's largest deviation from its mean. Scores
/// are averaged with the matched dims' largest deviations as weights.
pub fn irs(table: &RepresentationTable, params: &IrsParams, mig: &MigParams) -> Result<f64> {
    if params.min_group_size == 0 || params.other_factor_bins == Some(0) {
        return Err(Error::Config("irs needs min_group_size >= 1 and bins >= 1".into()));
    }
    if table.spec().len() < 2 {
        return Err(Error::Metric("irs needs at least two factors".into()));
    }
    let mi = mutual_info_matrix(table, mig)?;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..table.spec().len() {
        let matched = mi
            .iter()
            .enumerate()
            .filter_map(|(j, row)| row.as_ref().map(|r| (j, r[k])))
            .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((j, v)),
            });
        let Some((j, _)) = matched else {
            return Err(Error::Metric("all code dimensions are constant".into()));
        };
        let col = table.column(j);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let max_dev = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        let dev = interventional_deviation(table, k, j, params)?;
        let score = (1.0 - dev / max_dev).clamp(0.0, 1.0);
        num += max_dev * score;
        den += max_dev;
    }
    Ok((num / den).clamp(0.0, 1.0))
}
