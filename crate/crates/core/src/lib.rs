//! Projection-based tests for group differences in sparsely and irregularly
//! observed multivariate functional data.

pub mod basis;
pub mod cli;
pub mod covariance;
pub mod data;
pub mod eigen;
pub mod error;
pub mod linalg;
pub mod mean;
pub mod scores;
pub mod simulation;
pub mod stats;
pub mod testing;

pub use error::{Error, Result};
