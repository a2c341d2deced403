use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid factor count: {0}")]
    InvalidFactorCount(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("degenerate variance estimate: {0}")]
    DegenerateVariance(String),

    #[error("spikes {k} and {i} are nearly tied (relative gap {gap:.3e})")]
    NearDegenerateSpikes { k: usize, i: usize, gap: f64 },

    #[error("component index {k} is outside 1..={r}")]
    InvalidIndex { k: usize, r: usize },

    #[error("unsupported factor count: {0}")]
    UnsupportedFactorCount(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid simulation design: {0}")]
    InvalidDesign(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("period {label} has {rows} usable rows, fewer than the minimum {min}")]
    ShortPeriod {
        label: String,
        rows: usize,
        min: usize,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidPanel(_)
                | Error::InvalidFactorCount(_)
                | Error::InvalidLevel(_)
                | Error::InvalidIndex { .. }
                | Error::InvalidInput(_)
                | Error::InvalidSpec(_)
                | Error::InvalidDesign(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Csv(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
