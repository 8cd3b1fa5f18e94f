use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rooting depth {z_r} m exceeds soil column depth {depth} m")]
    RootDepthExceedsColumn { z_r: f64, depth: f64 },

    #[error("Newton iteration failed to converge after {iterations} iterations (residual {residual:.3e} m)")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("non-finite objective encountered after {iterations} iterations")]
    NonFiniteObjective { iterations: usize },

    #[error("non-finite PPO loss")]
    NonFiniteLoss,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("decision sequences differ across zone plans")]
    MismatchedDecisions,

    #[error("k-means: {0}")]
    Clustering(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("weather record missing for {missing} (previous record {previous})")]
    WeatherGap { missing: chrono::NaiveDate, previous: chrono::NaiveDate },

    #[error("zone {zone}: {source}")]
    Zone {
        zone: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("day {day}, zone {zone}: {source}")]
    Season {
        day: usize,
        zone: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_zone(self, zone: usize) -> Self {
        Error::Zone { zone, source: Box::new(self) }
    }
}
