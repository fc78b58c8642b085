//! Feature extractor: a convolutional backbone producing a 512×2×2 map, the
//! aggregation module reducing it to an ℓ2-normalized 512-d vector, and one
//! linear classification head per factor used only during finetuning.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ChannelStats, Dataset, FactorSpec};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{restore_module, restore_sequential, Checkpoint};
use crate::nn::{
    multitask_cross_entropy, Affine, BatchNorm, BatchNormConfig, Conv2d, Dropout, Flatten, L2Norm, MaxPool2d, Mode,
    Module, MultiTaskTargets, Param, Relu, Sequential,
};
use crate::optim::{RAdam, RAdamConfig};
use crate::tensor::{Rng, Tensor};

/// Width of the map entering the aggregator and of the aggregated vector.
pub const FEATURE_DIM: usize = 512;
/// Reported validation accuracy after finetuning on the two robot-arm
/// degrees of freedom of the real benchmark. Reference only; not reproduced.
pub const REFERENCE_VAL_ACCURACY_ARM: f64 = 0.98;
/// Reported validation accuracy on the remaining factors. Reference only.
pub const REFERENCE_VAL_ACCURACY_OTHER: f64 = 0.999;
/// Channel widths of the aggregator's three convolutions.
pub const AGGREGATOR_WIDTHS: [usize; 3] = [1024, 2048, 512];
/// Kernel sizes of the aggregator's three convolutions.
pub const AGGREGATOR_KERNELS: [usize; 3] = [1, 2, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackbonePreset {
    /// Conv3×3 + BN + ReLU + 2×2 max-pool blocks, trained from scratch.
    SmallCnn,
    /// No backbone: inputs are externally produced 512×2×2 feature maps.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub backbone: BackbonePreset,
    /// Output channels of the backbone blocks; the last must be 512.
    pub backbone_widths: Vec<usize>,
    pub image_size: usize,
    pub dropout: f64,
    pub batchnorm: BatchNormConfig,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            backbone: BackbonePreset::SmallCnn,
            backbone_widths: vec![64, 128, 256, 512],
            image_size: 32,
            dropout: 0.1,
            batchnorm: BatchNormConfig::default(),
        }
    }
}

pub struct ExtractorNet {
    config: ExtractorConfig,
    spec: FactorSpec,
    backbone: Sequential<f32>,
    aggregator: Sequential<f32>,
    heads: Vec<Affine<f32>>,
    channel_stats: Option<ChannelStats>,
}

fn check_backbone(config: &ExtractorConfig) -> Result<()> {
    if config.backbone == BackbonePreset::External {
        return Ok(());
    }
    let blocks = config.backbone_widths.len();
    let out = config.image_size >> blocks;
    if blocks == 0 || out << blocks != config.image_size || out != 2 {
        return Err(Error::Architecture(format!(
            "{blocks} pooling blocks map {0}×{0} images to {1}×{1}, the aggregator needs 2×2",
            config.image_size,
            config.image_size as f64 / (1u64 << blocks) as f64
        )));
    }
    if config.backbone_widths.last() != Some(&FEATURE_DIM) {
        return Err(Error::Architecture(format!(
            "backbone must end with {FEATURE_DIM} channels, got {:?}",
            config.backbone_widths
        )));
    }
    Ok(())
}

/// Builds the network with uniform He initialization everywhere.
pub fn build_extractor(config: &ExtractorConfig, spec: &FactorSpec, rng: &mut Rng) -> Result<ExtractorNet> {
    check_backbone(config)?;
    let bn = config.batchnorm;
    let mut backbone = Sequential::new();
    if config.backbone == BackbonePreset::SmallCnn {
        let mut c_in = 3;
        for &w in &config.backbone_widths {
            backbone
                .push(Conv2d::he(c_in, w, 3, 1, 1, rng))
                .push(BatchNorm::new_2d(w, bn))
                .push(Relu::new())
                .push(MaxPool2d::new());
            c_in = w;
        }
    }
    let mut aggregator = Sequential::new();
    let mut c_in = FEATURE_DIM;
    for (&w, &k) in AGGREGATOR_WIDTHS.iter().zip(&AGGREGATOR_KERNELS) {
        aggregator
            .push(Dropout::new(config.dropout)?)
            .push(Conv2d::he(c_in, w, k, 1, 0, rng))
            .push(BatchNorm::new_2d(w, bn))
            .push(Relu::new());
        c_in = w;
    }
    aggregator.push(Flatten::new()).push(L2Norm::new());
    let heads = spec
        .factors()
        .iter()
        .map(|f| Affine::he(FEATURE_DIM, f.cardinality, rng))
        .collect();
    Ok(ExtractorNet {
        config: config.clone(),
        spec: spec.clone(),
        backbone,
        aggregator,
        heads,
        channel_stats: None,
    })
}

impl ExtractorNet {
    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    /// Standardization constants recorded by finetuning.
    pub fn channel_stats(&self) -> Option<&ChannelStats> {
        self.channel_stats.as_ref()
    }

    pub fn set_channel_stats(&mut self, stats: ChannelStats) {
        self.channel_stats = Some(stats);
    }

    pub fn heads_mut(&mut self) -> &mut [Affine<f32>] {
        &mut self.heads
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.backbone.set_mode(mode);
        self.aggregator.set_mode(mode);
        self.heads.iter_mut().for_each(|h| h.set_mode(mode));
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count()
            + self.aggregator.param_count()
            + self
                .heads
                .iter()
                .flat_map(|h| h.params())
                .map(|p| p.value.len())
                .sum::<usize>()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<f32>> {
        self.backbone
            .params_mut()
            .chain(self.aggregator.params_mut())
            .chain(self.heads.iter_mut().flat_map(|h| h.params_mut().iter_mut()))
    }

    fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.aggregator.zero_grad();
        self.heads.iter_mut().for_each(|h| h.zero_grad());
    }

    /// Eval-mode 512-d aggregated vectors for a standardized image batch (or
    /// a batch of 512×2×2 maps with the `external` backbone).
    pub fn features(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let maps = self.backbone.infer(x)?;
        self.aggregate(&maps)
    }

    /// Eval-mode aggregation of `B×512×2×2` feature maps.
    pub fn aggregate(&self, maps: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, c, h, w) = maps.dims4()?;
        if (c, h, w) != (FEATURE_DIM, 2, 2) {
            return Err(Error::Architecture(format!(
                "aggregator expects {FEATURE_DIM}×2×2 maps, got {c}×{h}×{w}"
            )));
        }
        self.aggregator.infer(maps)
    }

    /// Eval-mode head logits, one block per factor.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let f = self.features(x)?;
        self.heads.iter().map(|h| h.infer(&f)).collect()
    }

    fn train_step(&mut self, x: &Tensor<f32>, targets: &MultiTaskTargets, rng: &mut Rng) -> Result<f32> {
        let maps = self.backbone.forward(x, rng)?;
        let feats = self.aggregator.forward(&maps, rng)?;
        let logits = self
            .heads
            .iter_mut()
            .map(|h| h.forward(&feats, rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = multitask_cross_entropy(&logits, targets)?;
        let mut dfeat = Tensor::zeros(feats.shape());
        for (h, g) in self.heads.iter_mut().zip(&grads) {
            dfeat.add_assign(&h.backward(g)?)?;
        }
        let dmaps = self.aggregator.backward(&dfeat)?;
        if !self.backbone.is_empty() {
            self.backbone.backward(&dmaps)?;
        }
        Ok(loss)
    }

    fn snapshot(&self) -> Vec<Tensor<f32>> {
        let mut out = Vec::new();
        for seq in [&self.backbone, &self.aggregator] {
            for l in seq.layers() {
                out.extend(l.params().iter().map(|p| p.value.clone()));
                out.extend(l.buffers().into_iter().map(|(_, t)| t.clone()));
            }
        }
        for h in &self.heads {
            out.extend(h.params().iter().map(|p| p.value.clone()));
        }
        out
    }

    fn restore(&mut self, snap: &[Tensor<f32>]) {
        let mut it = snap.iter();
        for seq in [&mut self.backbone, &mut self.aggregator] {
            for l in seq.layers_mut() {
                for p in l.params_mut() {
                    p.value = it.next().expect("snapshot").clone();
                }
                for (_, b) in l.buffers_mut() {
                    *b = it.next().expect("snapshot").clone();
                }
            }
        }
        for h in &mut self.heads {
            for p in h.params_mut() {
                p.value = it.next().expect("snapshot").clone();
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "model": "extractor",
            "config": self.config,
            "spec": self.spec,
            "channel_stats": self.channel_stats,
        }));
        ck.add_sequential("backbone", &self.backbone);
        ck.add_sequential("aggregator", &self.aggregator);
        for (i, h) in self.heads.iter().enumerate() {
            ck.add_module(&format!("head.{i}"), h);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta["model"] != "extractor" {
            return Err(Error::header("model", "checkpoint does not hold an extractor"));
        }
        let config: ExtractorConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let spec: FactorSpec = serde_json::from_value(ck.meta["spec"].clone())?;
        let stats: Option<ChannelStats> = serde_json::from_value(ck.meta["channel_stats"].clone())?;
        let mut net = build_extractor(&config, &spec, &mut Rng::new(0))?;
        let map = ck.tensor_map();
        restore_sequential(&map, "backbone", &mut net.backbone)?;
        restore_sequential(&map, "aggregator", &mut net.aggregator)?;
        for (i, h) in net.heads.iter_mut().enumerate() {
            restore_module(&map, &format!("head.{i}"), h)?;
        }
        net.channel_stats = stats;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping never triggers before this many epochs.
    pub min_epochs: usize,
    /// Stop once every factor reaches this validation accuracy...
    pub target_accuracy: f64,
    /// ...or after this many epochs without improvement.
    pub patience: usize,
    pub optimizer: RAdamConfig,
    /// Anneal the learning rate to zero over `max_epochs` with a half cosine.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 12,
            min_epochs: 3,
            target_accuracy: 0.99,
            patience: 5,
            optimizer: RAdamConfig {
                weight_decay: 0.01,
                ..RAdamConfig::default()
            },
            cosine_decay: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub factors: Vec<String>,
    pub epochs: Vec<FinetuneEpoch>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub val_accuracy: Vec<f64>,
    pub chance_accuracy: Vec<f64>,
}

/// Argmax accuracy of each logit block against its labels.
pub fn per_factor_accuracy(logits: &[Tensor<f32>], targets: &MultiTaskTargets) -> Result<Vec<f64>> {
    if logits.len() != targets.factors() {
        return Err(Error::dim("one logit block per factor"));
    }
    logits
        .iter()
        .zip(&targets.labels)
        .map(|(block, labels)| {
            let (b, k) = block.dims2()?;
            if b != labels.len() {
                return Err(Error::dim("logit rows and labels disagree"));
            }
            let correct = block
                .data()
                .chunks_exact(k)
                .zip(labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            Ok(correct as f64 / b.max(1) as f64)
        })
        .collect()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 256;

/// Per-factor validation accuracy; the network is switched to eval mode.
pub fn validate(net: &mut ExtractorNet, val: &Dataset) -> Result<Vec<f64>> {
    net.set_mode(Mode::Eval);
    let stats = match net.channel_stats {
        Some(s) => s,
        None => val.channel_stats,
    };
    let n = val.len();
    let mut correct = vec![0.0; val.spec.len()];
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let x = val.batch(&idx, &stats)?;
        let acc = per_factor_accuracy(&net.logits(&x)?, &val.targets(&idx))?;
        for (c, a) in correct.iter_mut().zip(acc) {
            *c += a * idx.len() as f64;
        }
    }
    Ok(correct.into_iter().map(|c| c / n as f64).collect())
}

/// Supervised multi-task finetuning. Standardization uses the train split's
/// channel statistics, which are recorded in the network. On return the
/// network holds the parameters of the best validation epoch.
pub fn finetune(
    net: &mut ExtractorNet,
    train: &Dataset,
    val: &Dataset,
    config: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if train.spec != *net.spec() || val.spec != *net.spec() {
        return Err(Error::Config("train/val factor specs differ from the network's".into()));
    }
    if config.batch_size < 2 {
        return Err(Error::Config(
            "finetuning needs batches of at least 2 (batchnorm)".into(),
        ));
    }
    if net.config.backbone == BackbonePreset::External {
        return Err(Error::Architecture("image finetuning needs an image backbone".into()));
    }
    let stats = train.channel_stats;
    net.channel_stats = Some(stats);
    let mut opt = RAdam::<f32>::new(config.optimizer.clone())?;
    let root = Rng::new(config.seed);
    let n = train.len();
    let chance: Vec<f64> = train.spec.cardinalities().iter().map(|&k| 1.0 / k as f64).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize, Vec<Tensor<f32>>)> = None;
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        if config.cosine_decay {
            let frac = epoch as f64 / config.max_epochs as f64;
            opt.set_lr(config.optimizer.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        }
        net.set_mode(Mode::Train);
        let order = root.fork(2 * epoch as u64).permutation(n);
        let mut rng = root.fork(2 * epoch as u64 + 1);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = train.batch(batch, &stats)?;
            let targets = train.targets(batch);
            net.zero_grad();
            let loss = net.train_step(&x, &targets, &mut rng)?;
            if !loss.is_finite() {
                let last_good = best.as_ref().map(|b| b.2);
                if let Some((_, _, _, snap)) = &best {
                    net.restore(snap);
                }
                return Err(Error::Divergence {
                    epoch,
                    last_good,
                    msg: "finetuning loss is not finite".into(),
                });
            }
            opt.step(net.params_mut())?;
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let acc = validate(net, val)?;
        let train_loss = loss_sum / seen.max(1) as f64;
        log::info!(
            "finetune epoch {epoch}: loss {train_loss:.4}, val accuracy {}",
            acc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
        );
        let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let improved = best.as_ref().is_none_or(|(w, m, _, _)| (worst, mean) > (*w, *m));
        if improved {
            best = Some((worst, mean, epoch, net.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        epochs.push(FinetuneEpoch {
            epoch,
            train_loss,
            val_accuracy: acc,
        });
        if epoch + 1 >= config.min_epochs && (worst >= config.target_accuracy || since_best >= config.patience) {
            break;
        }
    }
    let (_, _, best_epoch, snap) = best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    net.restore(&snap);
    net.set_mode(Mode::Eval);
    Ok(FinetuneReport {
        factors: train.spec.names(),
        val_accuracy: epochs[best_epoch].val_accuracy.clone(),
        epochs,
        best_epoch,
        chance_accuracy: chance,
    })
}

/// Provenance header of a [`FeatureSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub count: usize,
    pub dim: usize,
    /// Identifier of the dataset the vectors were extracted from.
    pub source_dataset: String,
    /// Identifier of the extractor checkpoint.
    pub checkpoint: String,
    /// Seconds since the Unix epoch.
    pub extracted_at: u64,
    pub channel_stats: ChannelStats,
}

/// `N×512` aggregated feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub vectors: Tensor<f32>,
    pub header: FeatureHeader,
}

/// Tolerance on the unit norm of extracted rows.
pub const NORM_TOLERANCE: f32 = 1e-5;

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unit (or zero) row norms and entries in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let (_, d) = self.vectors.dims2()?;
        for (i, row) in self.vectors.data().chunks_exact(d).enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::NonFinite(format!("feature row {i} has entries outside [0, 1]")));
            }
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm != 0.0 && (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::dim(format!("feature row {i} has norm {norm}")));
            }
        }
        Ok(())
    }

    /// Writes `features.json` (header) and `features.bin` (`N×D` f32 LE).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("features.json"), serde_json::to_vec_pretty(&self.header)?)?;
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for v in self.vectors.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("features.bin"), buf)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: FeatureHeader = serde_json::from_slice(&fs::read(dir.join("features.json"))?)
            .map_err(|e| Error::header("features.json", e))?;
        let raw = fs::read(dir.join("features.bin"))?;
        let want = header.count * header.dim * 4;
        if raw.len() != want {
            return Err(Error::format(
                raw.len().min(want) as u64,
                format!("features.bin holds {} bytes, expected {want}", raw.len()),
            ));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let vectors = Tensor::from_vec(&[header.count, header.dim], data)?;
        let fs = Self { vectors, header };
        fs.validate()?;
        Ok(fs)
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Eval-mode extraction of every image in `dataset`, standardized with
/// `stats`, which must equal the statistics recorded during finetuning.
pub fn extract_features(
    net: &mut ExtractorNet,
    dataset: &Dataset,
    stats: &ChannelStats,
    source_dataset: &str,
    checkpoint: &str,
) -> Result<FeatureSet> {
    match net.channel_stats {
        Some(ref recorded) if recorded.same_as(stats) => {}
        Some(_) => {
            return Err(Error::Provenance(
                "standardization statistics differ from those used for finetuning".into(),
            ))
        }
        None => {
            return Err(Error::Provenance(
                "extractor has no recorded standardization statistics".into(),
            ))
        }
    }
    net.set_mode(Mode::Eval);
    let n = dataset.len();
    let mut data = Vec::with_capacity(n * FEATURE_DIM);
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let x = dataset.batch(&idx, stats)?;
        data.extend_from_slice(net.features(&x)?.data());
    }
    let set = FeatureSet {
        vectors: Tensor::from_vec(&[n, FEATURE_DIM], data)?,
        header: FeatureHeader {
            count: n,
            dim: FEATURE_DIM,
            source_dataset: source_dataset.to_string(),
            checkpoint: checkpoint.to_string(),
            extracted_at: now_unix(),
            channel_stats: *stats,
        },
    };
    set.validate()?;
    Ok(set)
}

/// Aggregated vectors for externally produced `N×512×2×2` maps.
pub fn extract_features_from_maps(
    net: &mut ExtractorNet,
    maps: &Tensor<f32>,
    source: &str,
    checkpoint: &str,
) -> Result<FeatureSet> {
    net.set_mode(Mode::Eval);
    let vectors = net.aggregate(maps)?;
    let n = vectors.shape()[0];
    let set = FeatureSet {
        vectors,
        header: FeatureHeader {
            count: n,
            dim: FEATURE_DIM,
            source_dataset: source.to_string(),
            checkpoint: checkpoint.to_string(),
            extracted_at: now_unix(),
            channel_stats: net.channel_stats.unwrap_or(ChannelStats {
                mean: [0.0; 3],
                std: [1.0; 3],
            }),
        },
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_logits(labels: &[usize], k: usize) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[labels.len(), k]);
        for (i, &y) in labels.iter().enumerate() {
            t.data_mut()[i * k + y] = 1.0;
        }
        t
    }

    #[test]
    fn perfect_and_constant_logits() {
        let labels = vec![vec![0, 1, 2, 3, 0, 1, 2, 3], vec![1, 0, 1, 0, 1, 0, 1, 0]];
        let t = MultiTaskTargets::new(vec!["a".into(), "b".into()], labels.clone()).unwrap();
        let perfect = [one_hot_logits(&labels[0], 4), one_hot_logits(&labels[1], 2)];
        assert_eq!(per_factor_accuracy(&perfect, &t).unwrap(), vec![1.0, 1.0]);
        let constant = [Tensor::zeros(&[8, 4]), Tensor::zeros(&[8, 2])];
        assert_eq!(per_factor_accuracy(&constant, &t).unwrap(), vec![0.25, 0.5]);
    }

    #[test]
    fn wrong_image_size_is_architecture_error() {
        let cfg = ExtractorConfig {
            image_size: 48,
            ..Default::default()
        };
        let spec = FactorSpec::desk_default();
        assert!(matches!(
            build_extractor(&cfg, &spec, &mut Rng::new(0)),
            Err(Error::Architecture(_))
        ));
        let cfg = ExtractorConfig {
            backbone_widths: vec![8, 16, 32, 256],
            ..Default::default()
        };
        assert!(matches!(
            build_extractor(&cfg, &spec, &mut Rng::new(0)),
            Err(Error::Architecture(_))
        ));
    }

    #[test]
    fn aggregator_reduces_maps_to_unit_vectors() {
        let cfg = ExtractorConfig {
            backbone: BackbonePreset::External,
            ..Default::default()
        };
        let spec = FactorSpec::new([("hue", 3)]).unwrap();
        let mut rng = Rng::new(1);
        let mut net = build_extractor(&cfg, &spec, &mut rng).unwrap();
        let maps = Tensor::from_vec(&[3, 512, 2, 2], (0..3 * 2048).map(|_| rng.normal() as f32).collect()).unwrap();
        let f = extract_features_from_maps(&mut net, &maps, "maps", "init").unwrap();
        assert_eq!(f.vectors.shape(), &[3, 512]);
        assert!(net.aggregate(&Tensor::zeros(&[1, 512, 3, 3])).is_err());
    }
}
