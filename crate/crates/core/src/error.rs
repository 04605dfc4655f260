use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate radius: point coincides with the actor position")]
    DegenerateRadius,

    #[error("degenerate baseline: viewing rays are parallel")]
    DegenerateBaseline,

    #[error("need at least 2 views to triangulate, got {0}")]
    TooFewViews(usize),

    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),

    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),

    #[error("observation is not finite: {0:?}")]
    NonFiniteObservation(Vec3),

    #[error("cost weight `{name}` is negative ({value})")]
    NegativeWeight { name: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed occupancy grid: {0}")]
    GridFormat(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unsynchronized frames at timestamps {0:?}")]
    Unsynchronized(Vec<f64>),

    #[error("safety violation: drone {drone} at frame {frame} has clearance {clearance:.3} m")]
    SafetyViolation {
        frame: usize,
        drone: usize,
        clearance: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
