pub mod cli;
pub mod covariance;
pub mod error;
pub mod propagation;
pub mod se_analysis;
pub mod signal;
pub mod units;
pub mod zs_scattering;

pub use error::{Error, Result};
