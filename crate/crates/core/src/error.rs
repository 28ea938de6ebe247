use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Io {
        path: PathBuf,
        message: String,
    },

    #[error("csv parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot split: {0}")]
    InfeasibleSplit(String),

    #[error("{model}: {source}")]
    Model {
        model: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("IRLS did not converge after {iterations} iterations (last max change {last_change:.3e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        trace: Vec<f64>,
    },

    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no effective support at v = {v:?} (density {density:.3e} below floor)")]
    NoSupport { v: Vec<f64>, density: f64 },

    #[error("degenerate V: {0}")]
    DegenerateV(String),

    #[error("validation dropped {dropped} of {total} points for lack of support")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("replication {rep}: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn in_model(self, model: &'static str) -> Error {
        Error::Model {
            model,
            source: Box::new(self),
        }
    }

    /// Short machine-readable category, used by the CLI's one-line error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidData(_) => "invalid_data",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InfeasibleSplit(_) => "infeasible_split",
            Error::Model { source, .. } => source.kind(),
            Error::NonConvergence { .. } => "non_convergence",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoSupport { .. } => "density_floor",
            Error::DegenerateV(_) => "degenerate_v",
            Error::TooManyDropped { .. } => "density_floor",
            Error::Replication { source, .. } => source.kind(),
            Error::Simulation(_) => "simulation",
        }
    }
}
