use thiserror::Error;

/// Errors raised by the geometry, simulation and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("metric time {t} outside valid range [0, {limit}]")]
    TimeOutOfRange { t: f64, limit: f64 },

    #[error("point {coords:?} outside the validity region of chart {chart}")]
    Domain { chart: u8, coords: Vec<f64> },

    #[error("invalid chart id {0}")]
    InvalidChart(u8),

    #[error("no overlap between chart {from} and chart {to} at {coords:?}")]
    NoOverlap { from: u8, to: u8, coords: Vec<f64> },

    #[error("{0} is not supported by this family")]
    Unsupported(&'static str),

    #[error("finite-difference stencil of width {h} leaves the chart domain at {coords:?}")]
    BoundaryProximity { h: f64, coords: Vec<f64> },

    #[error("matrix is not symmetric positive definite (min eigenvalue {0})")]
    NotPositiveDefinite(f64),

    #[error("grid resolution {0} is too small (need at least 8)")]
    Resolution(usize),

    #[error("time stepping became unstable at t = {t}: max |u| = {max_abs}")]
    Unstable { t: f64, max_abs: f64 },

    #[error("step {dt} violates the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("frame left the orthonormal bundle: Gram defect {defect} > {tol} at step {step}")]
    GramDrift { step: usize, defect: f64, tol: f64 },

    #[error("path {path}, step {step}: {source}")]
    Step {
        path: u64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("sample too small or degenerate: {0}")]
    Degenerate(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
