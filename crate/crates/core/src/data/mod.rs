//! Factor-labelled synthetic image datasets.
//!
//! Images are small RGB sprites whose appearance is fully determined by a
//! tuple of discrete factors (hue, shape, scale, horizontal and vertical
//! position). Three rendering styles stand in for simulator/real domains.

mod io;
mod render;

pub use io::{load, save};
pub use render::{generate, generate_repeated, sprite_mask, MAX_SHAPES};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MultiTaskTargets;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
}

/// Ordered factor names and cardinalities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Factor>", into = "Vec<Factor>")]
pub struct FactorSpec {
    factors: Vec<Factor>,
}

impl TryFrom<Vec<Factor>> for FactorSpec {
    type Error = Error;

    fn try_from(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::UnsupportedSpec("at least one factor is required".into()));
        }
        let mut seen = HashSet::new();
        for f in &factors {
            if f.cardinality < 2 {
                return Err(Error::UnsupportedSpec(format!(
                    "factor `{}` has cardinality {} (< 2)",
                    f.name, f.cardinality
                )));
            }
            if f.cardinality > u16::MAX as usize {
                return Err(Error::UnsupportedSpec(format!("factor `{}` is too large", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::UnsupportedSpec(format!("duplicate factor name `{}`", f.name)));
            }
        }
        Ok(Self { factors })
    }
}

impl From<FactorSpec> for Vec<Factor> {
    fn from(spec: FactorSpec) -> Self {
        spec.factors
    }
}

impl FactorSpec {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        Self::try_from(
            factors
                .into_iter()
                .map(|(name, cardinality)| Factor {
                    name: name.into(),
                    cardinality,
                })
                .collect::<Vec<_>>(),
        )
    }

    /// hue 6 × shape 4 × scale 2 × posx 5 × posy 5 = 1200 combinations.
    pub fn desk_default() -> Self {
        Self::new([("hue", 6), ("shape", 4), ("scale", 2), ("posx", 5), ("posy", 5)]).expect("valid")
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn combinations(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality).product()
    }

    /// Factor values of combination `index`, last factor varying fastest.
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut values = vec![0; self.len()];
        for (v, f) in values.iter_mut().zip(&self.factors).rev() {
            *v = index % f.cardinality;
            index /= f.cardinality;
        }
        values
    }

    pub fn encode(&self, values: &[usize]) -> usize {
        values
            .iter()
            .zip(&self.factors)
            .fold(0, |acc, (&v, f)| acc * f.cardinality + v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Flat colors.
    Toy,
    /// Flat colors plus background and sprite shading gradients.
    Realistic,
    /// Shading plus seeded per-pixel noise.
    Real,
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Style::Toy),
            "realistic" => Ok(Style::Realistic),
            "real" => Ok(Style::Real),
            _ => Err(Error::Config(format!("unknown style `{s}`"))),
        }
    }
}

/// A run of consecutive images rendered in one style with one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub style: Style,
    pub seed: u64,
    pub len: usize,
}

/// Per-channel mean and standard deviation of pixel intensities in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn compute(images: &[u8], image_size: usize) -> Self {
        let plane = image_size * image_size;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for img in images.chunks_exact(3 * plane) {
            for c in 0..3 {
                for &p in &img[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += plane;
        }
        let n = count.max(1) as f64;
        let mut stats = ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            stats.mean[c] = mean;
            stats.std[c] = var.sqrt().max(1e-6);
        }
        stats
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            if !self.mean[c].is_finite() || !(self.std[c] > 0.0) || !self.std[c].is_finite() {
                return Err(Error::header("channel_stats", format!("invalid entry for channel {c}")));
            }
        }
        Ok(())
    }

    /// Bitwise equality, used for provenance checks.
    pub fn same_as(&self, other: &ChannelStats) -> bool {
        self.mean
            .iter()
            .zip(&other.mean)
            .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.std.iter().zip(&other.std).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Images (`N×3×S×S`, u8) with their factor labels (`N×F`, u16).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: FactorSpec,
    pub image_size: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub segments: Vec<Segment>,
    pub channel_stats: ChannelStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len() / self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> &[u16] {
        let f = self.spec.len();
        &self.labels[i * f..(i + 1) * f]
    }

    /// The single style of the dataset, if it was not concatenated from several.
    pub fn style(&self) -> Option<Style> {
        let first = self.segments.first()?.style;
        self.segments.iter().all(|s| s.style == first).then_some(first)
    }

    fn segment_of(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat(i).take(s.len))
            .collect()
    }

    /// Images at `indices`, in that order. Channel statistics are recomputed.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let seg_of = self.segment_of();
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len() * self.spec.len());
        let mut segments: Vec<Segment> = Vec::new();
        for &i in indices {
            if i >= self.len() {
                return Err(Error::dim(format!("image index {i} out of range {}", self.len())));
            }
            images.extend_from_slice(self.image(i));
            labels.extend_from_slice(self.label(i));
            let src = self.segments[seg_of[i]];
            match segments.last_mut() {
                Some(last) if last.style == src.style && last.seed == src.seed => last.len += 1,
                _ => segments.push(Segment { len: 1, ..src }),
            }
        }
        let channel_stats = ChannelStats::compute(&images, self.image_size);
        Ok(Dataset {
            spec: self.spec.clone(),
            image_size: self.image_size,
            images,
            labels,
            segments,
            channel_stats,
        })
    }

    /// Concatenation of datasets sharing one spec and image size.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::dim("nothing to concatenate"))?;
        let mut out = (*first).clone();
        for d in &parts[1..] {
            if d.spec != first.spec || d.image_size != first.image_size {
                return Err(Error::dim("cannot concatenate datasets with different specs or sizes"));
            }
            out.images.extend_from_slice(&d.images);
            out.labels.extend_from_slice(&d.labels);
            out.segments.extend_from_slice(&d.segments);
        }
        out.channel_stats = ChannelStats::compute(&out.images, out.image_size);
        Ok(out)
    }

    /// Standardized `B×3×S×S` batch of the images at `indices`.
    pub fn batch(&self, indices: &[usize], stats: &ChannelStats) -> Result<Tensor<f32>> {
        let plane = self.image_size * self.image_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * plane);
        let lut: Vec<[f32; 256]> = (0..3)
            .map(|c| {
                let mut t = [0f32; 256];
                for (p, v) in t.iter_mut().enumerate() {
                    *v = ((p as f64 / 255.0 - stats.mean[c]) / stats.std[c]) as f32;
                }
                t
            })
            .collect();
        for &i in indices {
            let img = self.image(i);
            for c in 0..3 {
                data.extend(img[c * plane..(c + 1) * plane].iter().map(|&p| lut[c][p as usize]));
            }
        }
        Tensor::from_vec(&[indices.len(), 3, self.image_size, self.image_size], data)
    }

    pub fn targets(&self, indices: &[usize]) -> MultiTaskTargets {
        let labels = (0..self.spec.len())
            .map(|f| indices.iter().map(|&i| self.label(i)[f] as usize).collect())
            .collect();
        MultiTaskTargets {
            names: self.spec.names(),
            labels,
        }
    }

    /// `N×F` label matrix as usize rows.
    pub fn label_rows(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|i| self.label(i).iter().map(|&v| v as usize).collect())
            .collect()
    }
}

/// Indices of a seeded train/validation split, made independently inside
/// every style segment. Both sides are sorted.
pub fn split_indices(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut start = 0;
    for (si, seg) in dataset.segments.iter().enumerate() {
        let n_train = (train_fraction * seg.len as f64).round() as usize;
        if n_train == 0 || n_train >= seg.len {
            return Err(Error::DegenerateSplit(format!(
                "segment {si} ({:?}, {} images) leaves an empty side at fraction {train_fraction}",
                seg.style, seg.len
            )));
        }
        let perm = rng.fork(si as u64).permutation(seg.len);
        train.extend(perm[..n_train].iter().map(|&i| start + i));
        val.extend(perm[n_train..].iter().map(|&i| start + i));
        start += seg.len;
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Seeded, per-style split into `(train, val)`.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset, train_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&val)?))
}
