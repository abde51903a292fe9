//! Brownian motion for time-dependent Riemannian metrics.
pub mod error;
pub mod estimators;
pub mod flow_solver;
pub mod geometry;
pub mod linalg;
pub mod pde_oracle;
pub mod sde;
pub mod snapshot;
pub mod spectral;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
