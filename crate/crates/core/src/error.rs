use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("layer state error: {0}")]
    State(String),

    #[error("label {label} out of range for factor `{factor}` with {cardinality} classes")]
    LabelOutOfRange {
        factor: String,
        label: usize,
        cardinality: usize,
    },

    #[error("optimizer: non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("unsupported factor spec: {0}")]
    UnsupportedSpec(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("invalid header field `{field}`: {msg}")]
    Header { field: String, msg: String },

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("training diverged at epoch {epoch}: {msg} (last good epoch: {})", last_good.map_or("none".to_string(), |e| e.to_string()))]
    Divergence {
        epoch: usize,
        last_good: Option<usize>,
        msg: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline error in stage `{stage}`: {msg}")]
    Pipeline { stage: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn format(offset: u64, msg: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn header(field: &str, msg: impl fmt::Display) -> Self {
        Error::Header {
            field: field.to_string(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn pipeline(stage: &str, msg: impl fmt::Display) -> Self {
        Error::Pipeline {
            stage: stage.to_string(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnsupportedSpec(_) | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::NonFiniteGradient(_) | Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
