use std::path::PathBuf;

use thiserror::Error;

use crate::net::TrainHistory;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps each variant onto one of its exit codes through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate quote: bid and ask volumes are both zero")]
    DegenerateQuote,

    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("missing upstream artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: TrainHistory },

    #[error("epistemic covariance needs at least 2 dropout samples, got {0}")]
    EpistemicUndefined(usize),

    #[error("predictive variance undefined: degrees of freedom {0} <= 2")]
    VarianceUndefined(f64),

    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    #[error("sizing error: sigma must be positive, got {0}")]
    Sizing(f64),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            got,
        }
    }

    /// 1 config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Schema(_)
            | Error::Data(_)
            | Error::DegenerateQuote
            | Error::Shape { .. }
            | Error::MissingArtifact(_)
            | Error::Io { .. }
            | Error::Format(_) => 2,
            Error::NonFinite { .. }
            | Error::Diverged { .. }
            | Error::EpistemicUndefined(_)
            | Error::VarianceUndefined(_)
            | Error::Conditioning(_)
            | Error::Sizing(_) => 3,
        }
    }
}
