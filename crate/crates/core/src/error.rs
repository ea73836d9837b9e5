use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", .0.join("; "))]
    InvalidNetwork(Vec<String>),

    #[error("reaction {reaction}: species {species} count {count} is negative")]
    DomainViolation {
        reaction: usize,
        species: usize,
        count: f64,
    },

    #[error("unsupported closure order: {0}")]
    UnsupportedOrder(String),

    #[error("slow state {0:?} is not part of the domain")]
    MissingNeighbor(Vec<i64>),

    #[error("marginal mass {mass:e} at slow state {state:?} is below the floor {floor:e}")]
    ZeroMass {
        state: Vec<i64>,
        mass: f64,
        floor: f64,
    },

    #[error("initial domain is empty")]
    EmptyDomain,

    #[error("non-finite value at step {step} ({what})")]
    Instability { step: usize, what: String },

    #[error("malformed maxent problem: {0}")]
    InvalidProblem(String),

    #[error("moment targets lie outside the moment polytope of the grid: {0}")]
    InfeasibleMoments(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("dual Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("grid has zero total mass")]
    EmptyGrid,

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed grid file {path}: {message}")]
    GridFormat { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidNetwork(_) | Error::UnsupportedOrder(_)
        )
    }
}
