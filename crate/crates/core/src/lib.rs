#[cfg(feature = "cli")]
pub mod cli;
pub mod coefficients;
pub mod error;
pub mod inequalities;
pub mod invariant;
pub mod kinetic;
pub mod measures;
pub mod numeric;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
