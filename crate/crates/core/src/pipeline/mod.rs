//! End-to-end orchestration: `generate → finetune → extract → train →
//! evaluate`, plus a text `report`.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.json               resolved configuration of the last command
//! data/{toy,realistic,real} rendered datasets
//! extractor/                extractor.ckpt, finetune.json
//! features/                 features.json, features.bin (real style)
//! vae/                      vae.ckpt, history.jsonl
//! metrics/                  report.json, noise_baseline.json
//! ```
//!
//! Every stage directory holds a `stage.json` recording the stage's seed and
//! config slice, the sha256 of each input and output artifact, and the hash
//! of the upstream `stage.json`. A stage whose record still matches its
//! inputs and outputs is skipped; upstream artifacts are re-hashed before a
//! stage runs and any mismatch is a pipeline error naming the stage.

mod stage;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use stage::{hash_file, StageRecord};

use crate::data::{self, Dataset, FactorSpec, Style};
use crate::error::{Error, Result};
use crate::extractor::{self, ExtractorConfig, ExtractorNet, FeatureSet, FinetuneConfig, FinetuneReport};
use crate::metrics::{self, MetricConfig, MetricReport, RepresentationTable};
use crate::nn::checkpoint::Checkpoint;
use crate::tensor::Rng;
use crate::vae::{self, TrainHistory, VaeConfig, VaeModel, VaePreset, VaeTrainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub spec: FactorSpec,
    pub image_size: usize,
    /// Styles used for finetuning, each split independently.
    pub finetune_styles: Vec<Style>,
    /// Style whose features are encoded and scored.
    pub eval_style: Style,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            spec: FactorSpec::desk_default(),
            image_size: 32,
            finetune_styles: vec![Style::Toy, Style::Realistic],
            eval_style: Style::Real,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub extractor: ExtractorConfig,
    pub finetune: FinetuneConfig,
    pub vae_preset: VaePreset,
    /// Replaces the preset's VAE configuration when present.
    pub vae: Option<VaeConfig>,
    pub metrics: MetricConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            extractor: ExtractorConfig::default(),
            finetune: FinetuneConfig::default(),
            vae_preset: VaePreset::Desk,
            vae: None,
            metrics: MetricConfig::default(),
        }
    }
}

/// Stage indices used to derive per-stage seeds from the global seed.
const SEED_GENERATE: u64 = 0;
const SEED_SPLIT: u64 = 1;
const SEED_INIT: u64 = 2;
const SEED_FINETUNE: u64 = 3;
const SEED_VAE: u64 = 4;
const SEED_METRICS: u64 = 5;
const SEED_NOISE: u64 = 6;

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn stage_seed(&self, stage: u64) -> u64 {
        Rng::new(self.seed).fork(stage).next_u64()
    }

    /// The VAE configuration with the derived training seed.
    pub fn vae_config(&self) -> VaeConfig {
        let mut cfg = self.vae.clone().unwrap_or_else(|| VaeConfig::preset(self.vae_preset));
        cfg.train.seed = self.stage_seed(SEED_VAE);
        cfg
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            seed: self.stage_seed(SEED_FINETUNE),
            ..self.finetune.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.finetune_styles.is_empty() {
            return Err(Error::Config("at least one finetuning style is required".into()));
        }
        if self.extractor.image_size != self.dataset.image_size {
            return Err(Error::Config(format!(
                "extractor image size {} differs from dataset image size {}",
                self.extractor.image_size, self.dataset.image_size
            )));
        }
        if self.finetune.batch_size < 2 || self.finetune.max_epochs == 0 {
            return Err(Error::Config(
                "finetune needs batch_size >= 2 and max_epochs >= 1".into(),
            ));
        }
        self.finetune.optimizer.validate()?;
        let vae = self.vae_config();
        vae.validate()?;
        if vae.arch.input_dim != extractor::FEATURE_DIM {
            return Err(Error::Config(format!(
                "vae input_dim must be {}",
                extractor::FEATURE_DIM
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

pub const STAGES: [&str; 5] = ["generate", "finetune", "extract", "train", "evaluate"];

fn style_name(s: Style) -> &'static str {
    match s {
        Style::Toy => "toy",
        Style::Realistic => "realistic",
        Style::Real => "real",
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    root: PathBuf,
    force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out_dir: &Path) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            root: out_dir.to_path_buf(),
            force: false,
        })
    }

    /// Rerun stages even when their records are up to date.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, stage: &str) -> PathBuf {
        let sub = match stage {
            "generate" => "data",
            "finetune" => "extractor",
            "extract" => "features",
            "train" => "vae",
            "evaluate" => "metrics",
            other => other,
        };
        self.root.join(sub)
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn archive_config(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join("config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        Ok(())
    }

    fn dataset_dir(&self, style: Style) -> PathBuf {
        self.dir("generate").join(style_name(style))
    }

    fn styles(&self) -> Vec<Style> {
        let mut s = self.config.dataset.finetune_styles.clone();
        if !s.contains(&self.config.dataset.eval_style) {
            s.push(self.config.dataset.eval_style);
        }
        s
    }

    fn stage_config(&self, stage: &str) -> Value {
        let c = &self.config;
        match stage {
            "generate" => json!({ "dataset": c.dataset, "seed": c.stage_seed(SEED_GENERATE) }),
            "finetune" => json!({
                "extractor": c.extractor,
                "finetune": c.finetune_config(),
                "split_seed": c.stage_seed(SEED_SPLIT),
                "init_seed": c.stage_seed(SEED_INIT),
            }),
            "extract" => json!({ "eval_style": c.dataset.eval_style }),
            "train" => json!({ "vae": c.vae_config() }),
            "evaluate" => json!({
                "metrics": c.metrics,
                "seed": c.stage_seed(SEED_METRICS),
                "noise_seed": c.stage_seed(SEED_NOISE),
            }),
            _ => Value::Null,
        }
    }

    /// Input files of a stage, relative to the run directory.
    fn inputs(&self, stage: &str) -> Vec<String> {
        let ds = |s: Style| {
            let d = format!("data/{}", style_name(s));
            vec![
                format!("{d}/meta.json"),
                format!("{d}/images.bin"),
                format!("{d}/labels.bin"),
            ]
        };
        match stage {
            "generate" => vec![],
            "finetune" => self
                .config
                .dataset
                .finetune_styles
                .iter()
                .flat_map(|&s| ds(s))
                .collect(),
            "extract" => {
                let mut v = vec!["extractor/extractor.ckpt".to_string()];
                v.extend(ds(self.config.dataset.eval_style));
                v
            }
            "train" => vec!["features/features.bin".into()],
            "evaluate" => {
                let mut v = vec!["vae/vae.ckpt".to_string(), "features/features.bin".into()];
                v.extend(ds(self.config.dataset.eval_style));
                v
            }
            _ => vec![],
        }
    }

    fn upstream(stage: &str) -> Vec<&'static str> {
        match stage {
            "finetune" => vec!["generate"],
            "extract" => vec!["finetune", "generate"],
            "train" => vec!["extract"],
            "evaluate" => vec!["train", "extract", "generate"],
            _ => vec![],
        }
    }

    fn record_path(&self, stage: &str) -> PathBuf {
        self.dir(stage).join("stage.json")
    }

    pub fn load_record(&self, stage: &str) -> Result<StageRecord> {
        StageRecord::load(&self.record_path(stage))
            .map_err(|e| Error::pipeline(stage, format!("no usable stage record: {e}")))
    }

    fn verify_upstream(&self, stage: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for up in Self::upstream(stage) {
            let rec = self.load_record(up)?;
            rec.verify_outputs(&self.root).map_err(|msg| Error::pipeline(up, msg))?;
            out.push((up.to_string(), hash_file(&self.record_path(up))?));
        }
        Ok(out)
    }

    fn hash_inputs(&self, stage: &str) -> Result<Vec<(String, String)>> {
        self.inputs(stage)
            .into_iter()
            .map(|rel| {
                let h = hash_file(&self.root.join(&rel))
                    .map_err(|e| Error::pipeline(stage, format!("missing input {rel}: {e}")))?;
                Ok((rel, h))
            })
            .collect()
    }

    fn up_to_date(&self, stage: &str, inputs: &[(String, String)], upstream: &[(String, String)]) -> bool {
        if self.force {
            return false;
        }
        let Ok(rec) = StageRecord::load(&self.record_path(stage)) else {
            return false;
        };
        rec.config == self.stage_config(stage)
            && rec.inputs == inputs
            && rec.upstream == upstream
            && rec.verify_outputs(&self.root).is_ok()
    }

    fn run_stage(&self, stage: &str, body: impl FnOnce() -> Result<Vec<String>>) -> Result<StageOutcome> {
        let upstream = self.verify_upstream(stage)?;
        let inputs = self.hash_inputs(stage)?;
        if self.up_to_date(stage, &inputs, &upstream) {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome::Skipped);
        }
        let _ = fs::remove_file(self.record_path(stage));
        fs::create_dir_all(self.dir(stage))?;
        let outputs = body()?;
        let outputs = outputs
            .into_iter()
            .map(|rel| Ok((rel.clone(), hash_file(&self.root.join(&rel))?)))
            .collect::<Result<Vec<_>>>()?;
        let rec = StageRecord {
            stage: stage.to_string(),
            seed: self.config.seed,
            config: self.stage_config(stage),
            inputs,
            outputs,
            upstream,
        };
        rec.save(&self.record_path(stage))?;
        log::info!("{stage}: done");
        Ok(StageOutcome::Ran)
    }

    pub fn generate(&self) -> Result<StageOutcome> {
        self.run_stage("generate", || {
            let c = &self.config.dataset;
            let seed = self.config.stage_seed(SEED_GENERATE);
            let mut out = Vec::new();
            for (i, style) in self.styles().into_iter().enumerate() {
                let d = data::generate(&c.spec, c.image_size, style, seed.wrapping_add(i as u64))?;
                data::save(&d, &self.dataset_dir(style))?;
                let name = style_name(style);
                out.extend(["meta.json", "images.bin", "labels.bin"].map(|f| format!("data/{name}/{f}")));
            }
            Ok(out)
        })
    }

    fn load_dataset(&self, style: Style) -> Result<Dataset> {
        data::load(&self.dataset_dir(style))
    }

    pub fn finetune(&self) -> Result<StageOutcome> {
        self.run_stage("finetune", || {
            let c = &self.config;
            let parts = c
                .dataset
                .finetune_styles
                .iter()
                .map(|&s| self.load_dataset(s))
                .collect::<Result<Vec<_>>>()?;
            let all = Dataset::concat(&parts.iter().collect::<Vec<_>>())?;
            let (train, val) = data::split(&all, c.dataset.train_fraction, c.stage_seed(SEED_SPLIT))?;
            let mut rng = Rng::new(c.stage_seed(SEED_INIT));
            let mut net = extractor::build_extractor(&c.extractor, &c.dataset.spec, &mut rng)?;
            let result = extractor::finetune(&mut net, &train, &val, &c.finetune_config());
            let dir = self.dir("finetune");
            if let Err(e @ Error::Divergence { .. }) = result {
                net.to_checkpoint().save(&dir.join("extractor_last_good.ckpt"))?;
                return Err(e);
            }
            let report = result?;
            net.to_checkpoint().save(&dir.join("extractor.ckpt"))?;
            fs::write(dir.join("finetune.json"), serde_json::to_vec_pretty(&report)?)?;
            Ok(vec![
                "extractor/extractor.ckpt".into(),
                "extractor/finetune.json".into(),
            ])
        })
    }

    pub fn finetune_report(&self) -> Result<FinetuneReport> {
        let raw = fs::read(self.dir("finetune").join("finetune.json")).map_err(|e| Error::pipeline("finetune", e))?;
        Ok(serde_json::from_slice(&raw)?)
    }

    pub fn extract(&self) -> Result<StageOutcome> {
        self.run_stage("extract", || {
            let ckpt_path = self.dir("finetune").join("extractor.ckpt");
            let mut net = ExtractorNet::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
            let stats = *net
                .channel_stats()
                .ok_or_else(|| Error::Provenance("extractor checkpoint has no standardization statistics".into()))?;
            let style = self.config.dataset.eval_style;
            let d = self.load_dataset(style)?;
            let source = hash_file(&self.dataset_dir(style).join("images.bin"))?;
            let ckpt = hash_file(&ckpt_path)?;
            let set = extractor::extract_features(&mut net, &d, &stats, &source, &ckpt)?;
            set.save(&self.dir("extract"))?;
            Ok(vec!["features/features.bin".into()])
        })
    }

    pub fn load_features(&self) -> Result<FeatureSet> {
        FeatureSet::load(&self.dir("extract")).map_err(|e| Error::pipeline("extract", e))
    }

    pub fn train(&self) -> Result<StageOutcome> {
        self.run_stage("train", || {
            let features = self.load_features()?;
            let cfg = self.config.vae_config();
            let mut trainer = VaeTrainer::new(&cfg)?;
            let result = trainer.run(&features.vectors);
            let dir = self.dir("train");
            fs::write(dir.join("history.jsonl"), trainer.history().to_jsonl())?;
            let meta = json!({ "seed": self.config.seed, "train": cfg.train });
            if let Err(e @ Error::Divergence { .. }) = result {
                trainer
                    .model()
                    .to_checkpoint(meta)
                    .save(&dir.join("vae_last_good.ckpt"))?;
                return Err(e);
            }
            result?;
            trainer.model().to_checkpoint(meta).save(&dir.join("vae.ckpt"))?;
            Ok(vec!["vae/vae.ckpt".into(), "vae/history.jsonl".into()])
        })
    }

    pub fn history(&self) -> Result<TrainHistory> {
        let text =
            fs::read_to_string(self.dir("train").join("history.jsonl")).map_err(|e| Error::pipeline("train", e))?;
        TrainHistory::from_jsonl(&text)
    }

    pub fn evaluate(&self) -> Result<StageOutcome> {
        self.run_stage("evaluate", || {
            let model = VaeModel::from_checkpoint(&Checkpoint::load(&self.dir("train").join("vae.ckpt"))?)?;
            let features = self.load_features()?;
            let d = self.load_dataset(self.config.dataset.eval_style)?;
            if d.len() != features.len() {
                return Err(Error::pipeline(
                    "extract",
                    "feature count differs from the dataset size",
                ));
            }
            let c = &self.config;
            let report = metrics::evaluate_all(&model, &features.vectors, &d, &c.metrics, c.stage_seed(SEED_METRICS))?;
            let noise = RepresentationTable::noise(&d, model.latent_dim(), c.stage_seed(SEED_NOISE))?;
            let baseline = metrics::evaluate_table(&noise, &c.metrics, c.stage_seed(SEED_METRICS))?;
            let dir = self.dir("evaluate");
            fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
            fs::write(dir.join("noise_baseline.json"), serde_json::to_vec_pretty(&baseline)?)?;
            Ok(vec!["metrics/report.json".into(), "metrics/noise_baseline.json".into()])
        })
    }

    pub fn metric_report(&self) -> Result<(MetricReport, MetricReport)> {
        let dir = self.dir("evaluate");
        let read = |f: &str| -> Result<MetricReport> {
            let raw = fs::read(dir.join(f)).map_err(|e| Error::pipeline("evaluate", e))?;
            Ok(serde_json::from_slice(&raw)?)
        };
        Ok((read("report.json")?, read("noise_baseline.json")?))
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<(&'static str, StageOutcome)>> {
        self.archive_config()?;
        Ok(vec![
            ("generate", self.generate()?),
            ("finetune", self.finetune()?),
            ("extract", self.extract()?),
            ("train", self.train()?),
            ("evaluate", self.evaluate()?),
        ])
    }

    /// Text summary of metrics, training and provenance.
    pub fn report(&self) -> Result<String> {
        let (report, baseline) = self.metric_report()?;
        let mut out = String::from("Disentanglement scores\n\n");
        out += &metrics::render_table(&[("this run", &report), ("noise baseline", &baseline)], true);
        out += &format!(
            "\nDCI completeness {:.3}, informativeness {:.3}\n",
            report.dci_completeness, report.dci_informativeness
        );
        if let Ok(ft) = self.finetune_report() {
            out += &format!(
                "\nFinetuning: {} epochs, kept epoch {}\n",
                ft.epochs.len(),
                ft.best_epoch
            );
            for ((name, acc), chance) in ft.factors.iter().zip(&ft.val_accuracy).zip(&ft.chance_accuracy) {
                out += &format!("  {name:<8} val accuracy {acc:.3} (chance {chance:.3})\n");
            }
        }
        let history = self.history()?;
        let features = self.load_features()?;
        let baseline_mse = vae::constant_predictor_mse(&features.vectors)?;
        if let (Some(first), Some(last)) = (history.records.first(), history.last()) {
            out += &format!(
                "\nVAE training: {} epochs, beta {:.4} -> {:.4}\n  mse {:.5} -> {:.5} (constant predictor {:.5})\n  kld {:.5} -> {:.5}\n",
                history.records.len(),
                first.beta,
                last.beta,
                first.mse,
                last.mse,
                baseline_mse,
                first.kld,
                last.kld
            );
        }
        out += "\nProvenance\n";
        for stage in STAGES {
            let rec = self.load_record(stage)?;
            out += &format!(
                "  {stage:<9} global seed {} config {}\n",
                rec.seed,
                short(&stage::hash_json(&rec.config))
            );
            for (path, h) in &rec.inputs {
                out += &format!("    in  {path} {}\n", short(h));
            }
            for (path, h) in &rec.outputs {
                out += &format!("    out {path} {}\n", short(h));
            }
        }
        Ok(out)
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_rejection() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{\"seed\": 4}").unwrap().seed, 4);
        let err = PipelineConfig::from_json("{\"sed\": 4}").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn appendix_b_preset_resolves() {
        let c = PipelineConfig {
            vae_preset: VaePreset::AppendixB,
            ..Default::default()
        };
        let v = c.vae_config();
        assert_eq!(v.arch.latent, 16);
        assert_eq!(v.train.schedule.epochs, 100);
        assert_eq!(v.train.schedule.beta_start, 0.001);
        assert_eq!(v.train.schedule.t_end, 49);
    }

    #[test]
    fn stage_seeds_differ() {
        let c = PipelineConfig::default();
        let seeds: std::collections::BTreeSet<u64> = (0..7).map(|s| c.stage_seed(s)).collect();
        assert_eq!(seeds.len(), 7);
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path()).unwrap();
        match p.finetune() {
            Err(Error::Pipeline { stage, .. }) => assert_eq!(stage, "generate"),
            other => panic!("{other:?}"),
        }
    }
}
