//! Windowed, visit-controlled stochastic-approximation free energy estimation.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod global;
pub mod jackknife;
pub mod models;
pub mod numeric;
pub mod rung_density;
pub mod sampler;
pub mod windows;

pub use error::{Result, TssError};
