//! Log-correlated Gaussian fields on `d`-dimensional lattices: covariance
//! oracles, exact samplers, extreme-value statistics, the multiscale
//! approximation field and limit-law diagnostics.

pub mod approx;
pub mod assumptions;
pub mod covariance;
pub mod error;
pub mod extremes;
pub mod lattice;
pub mod limitlaw;
pub mod perturb;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
