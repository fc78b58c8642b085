use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use featvae::data::{self, Dataset, FactorSpec, Style};
use featvae::metrics::{self, MetricConfig, RepresentationTable};
use featvae::pipeline::{self, PipelineConfig};
use featvae::vae::{self, VaeConfig, VaeModel, VaePreset, VaeTrainer};
use featvae::{Error, Tensor};

create_exception!(featvae, ConfigError, PyValueError);
create_exception!(featvae, PipelineError, PyRuntimeError);
create_exception!(featvae, NumericError, PyArithmeticError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => ConfigError::new_err(msg),
        4 => NumericError::new_err(msg),
        _ => PipelineError::new_err(msg),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(ConfigError::new_err("rows must all have the same length"));
    }
    Tensor::from_vec(&[rows.len(), d], rows.concat()).map_err(to_py)
}

fn rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let d = t.shape()[1];
    t.data()
        .chunks(d.max(1))
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

fn spec_from(factors: Vec<(String, usize)>) -> PyResult<FactorSpec> {
    FactorSpec::new(factors).map_err(to_py)
}

fn style_from(name: &str) -> PyResult<Style> {
    match name {
        "toy" => Ok(Style::Toy),
        "realistic" => Ok(Style::Realistic),
        "real" => Ok(Style::Real),
        other => Err(ConfigError::new_err(format!("unknown style `{other}`"))),
    }
}

fn preset_from(name: &str) -> PyResult<VaePreset> {
    name.parse().map_err(to_py)
}

/// Cosine-annealed KLD weight.
#[pyclass(name = "BetaSchedule", module = "featvae")]
struct PyBetaSchedule(vae::BetaSchedule);

#[pymethods]
impl PyBetaSchedule {
    #[new]
    #[pyo3(signature = (beta_start=0.005, beta_end=0.4, t_start=10, t_end=79, epochs=120))]
    fn new(beta_start: f64, beta_end: f64, t_start: usize, t_end: usize, epochs: usize) -> PyResult<Self> {
        let s = vae::BetaSchedule {
            beta_start,
            beta_end,
            t_start,
            t_end,
            epochs,
        };
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    #[staticmethod]
    fn appendix_b() -> Self {
        Self(vae::BetaSchedule::appendix_b())
    }

    fn beta_at(&self, t: usize) -> PyResult<f64> {
        self.0.beta_at(t).map_err(to_py)
    }

    fn values(&self) -> Vec<f64> {
        (0..self.0.epochs).map(|t| self.0.value_at(t as f64)).collect()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.0.epochs
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!(
            "BetaSchedule(beta_start={}, beta_end={}, t_start={}, t_end={}, epochs={})",
            s.beta_start, s.beta_end, s.t_start, s.t_end, s.epochs
        )
    }
}

/// Returns `(total, mse, kld)` for one batch.
#[pyfunction]
fn elbo_loss(
    x: Vec<Vec<f64>>,
    mu_hat: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    logvar: Vec<Vec<f64>>,
    beta: f64,
) -> PyResult<(f64, f64, f64)> {
    let t = vae::elbo_loss(&matrix(&x)?, &matrix(&mu_hat)?, &matrix(&mu)?, &matrix(&logvar)?, beta).map_err(to_py)?;
    Ok((t.total, t.mse, t.kld))
}

/// A rendered synthetic dataset.
#[pyclass(name = "Dataset", module = "featvae")]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn factors(&self) -> Vec<(String, usize)> {
        self.0
            .spec
            .factors()
            .iter()
            .map(|f| (f.name.clone(), f.cardinality))
            .collect()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.0.image_size
    }

    fn labels(&self) -> Vec<Vec<usize>> {
        self.0.label_rows()
    }

    /// Raw `3×H×W` u8 pixels of image `i`.
    fn image(&self, i: usize) -> PyResult<Vec<u8>> {
        if i >= self.0.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(i));
        }
        Ok(self.0.image(i).to_vec())
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        data::save(&self.0, &dir).map_err(to_py)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        data::load(&dir).map(Self).map_err(to_py)
    }
}

/// Renders every factor combination once. `factors` defaults to the
/// 1200-combination desk spec.
#[pyfunction]
#[pyo3(signature = (style="real", seed=0, image_size=32, factors=None))]
fn generate(style: &str, seed: u64, image_size: usize, factors: Option<Vec<(String, usize)>>) -> PyResult<PyDataset> {
    let spec = match factors {
        Some(f) => spec_from(f)?,
        None => FactorSpec::desk_default(),
    };
    data::generate(&spec, image_size, style_from(style)?, seed)
        .map(PyDataset)
        .map_err(to_py)
}

fn report_dict<'py>(py: Python<'py>, r: &metrics::MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, s) in metrics::MetricReport::SCORE_NAMES.iter().zip(r.scores()) {
        d.set_item(*name, s)?;
    }
    Ok(d)
}

/// Scores a code matrix against its factor labels; returns a dict of the
/// seven scores.
#[pyfunction]
#[pyo3(signature = (codes, labels, factors, seed=0))]
fn evaluate<'py>(
    py: Python<'py>,
    codes: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
    factors: Vec<(String, usize)>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let codes = matrix(&codes)?.cast::<f32>();
    let table = RepresentationTable::new(&codes, labels, spec_from(factors)?).map_err(to_py)?;
    let report = py
        .detach(|| metrics::evaluate_table(&table, &MetricConfig::default(), seed))
        .map_err(to_py)?;
    report_dict(py, &report)
}

/// A trained β-VAE.
#[pyclass(name = "VaeModel", module = "featvae")]
struct PyVaeModel(VaeModel<f32>);

#[pymethods]
impl PyVaeModel {
    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    /// Posterior means for each row of `x`.
    fn represent(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x)?.cast::<f32>();
        vae::represent(&self.0, &x).map(|z| rows(&z)).map_err(to_py)
    }

    fn param_count(&self) -> usize {
        self.0.param_count()
    }
}

/// Trains a β-VAE on feature rows. Returns the model and the per-epoch
/// history as a list of dicts.
#[pyfunction]
#[pyo3(signature = (features, preset="desk", seed=0, epochs=None))]
fn train_vae<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    preset: &str,
    seed: u64,
    epochs: Option<usize>,
) -> PyResult<(PyVaeModel, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = VaeConfig::preset(preset_from(preset)?);
    cfg.train.seed = seed;
    if let Some(n) = epochs {
        let s = &mut cfg.train.schedule;
        s.epochs = n;
        s.t_end = s.t_end.min(n.saturating_sub(1));
        s.t_start = s.t_start.min(s.t_end);
    }
    let x = matrix(&features)?.cast::<f32>();
    cfg.arch.input_dim = x.shape()[1];
    let (model, history) = py
        .detach(|| -> featvae::Result<_> {
            let mut trainer = VaeTrainer::new(&cfg)?;
            trainer.run(&x)?;
            Ok(trainer.into_parts())
        })
        .map_err(to_py)?;
    let records = history
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("beta", r.beta)?;
            d.set_item("mse", r.mse)?;
            d.set_item("kld", r.kld)?;
            d.set_item("total", r.total)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyVaeModel(model), records))
}

/// The staged generate → finetune → extract → train → evaluate pipeline
/// rooted at `out_dir`.
#[pyclass(name = "Pipeline", module = "featvae")]
struct PyPipeline(pipeline::Pipeline);

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (out_dir, config=None, seed=None, preset=None, force=false))]
    fn new(
        out_dir: PathBuf,
        config: Option<&str>,
        seed: Option<u64>,
        preset: Option<&str>,
        force: bool,
    ) -> PyResult<Self> {
        let mut c = match config {
            Some(text) => PipelineConfig::from_json(text).map_err(to_py)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(p) = preset {
            c.vae_preset = preset_from(p)?;
            c.vae = None;
        }
        let p = pipeline::Pipeline::new(c, &out_dir).map_err(to_py)?.force(force);
        p.archive_config().map_err(to_py)?;
        Ok(Self(p))
    }

    /// Resolved configuration as JSON.
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(self.0.config()).map_err(|e| PipelineError::new_err(e.to_string()))
    }

    /// Runs one stage by name; returns whether it ran (False: up to date).
    fn run_stage(&self, py: Python<'_>, stage: &str) -> PyResult<bool> {
        let p = &self.0;
        let outcome = py.detach(|| match stage {
            "generate" => p.generate(),
            "finetune" => p.finetune(),
            "extract" => p.extract(),
            "train" => p.train(),
            "evaluate" => p.evaluate(),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        });
        Ok(outcome.map_err(to_py)? == pipeline::StageOutcome::Ran)
    }

    fn run_all(&self, py: Python<'_>) -> PyResult<Vec<(String, bool)>> {
        let out = py.detach(|| self.0.run_all()).map_err(to_py)?;
        Ok(out
            .into_iter()
            .map(|(s, o)| (s.to_string(), o == pipeline::StageOutcome::Ran))
            .collect())
    }

    /// `(report, noise_baseline)` score dicts of the evaluate stage.
    fn scores<'py>(&self, py: Python<'py>) -> PyResult<(Bound<'py, PyDict>, Bound<'py, PyDict>)> {
        let (r, n) = self.0.metric_report().map_err(to_py)?;
        Ok((report_dict(py, &r)?, report_dict(py, &n)?))
    }

    fn report(&self) -> PyResult<String> {
        self.0.report().map_err(to_py)
    }
}

#[pymodule]
#[pyo3(name = "featvae")]
fn featvae_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("PipelineError", py.get_type::<PipelineError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add("STAGES", pipeline::STAGES.to_vec())?;
    m.add_class::<PyBetaSchedule>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyVaeModel>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(elbo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train_vae, m)?)?;
    Ok(())
}
