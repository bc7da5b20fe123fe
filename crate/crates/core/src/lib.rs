//! Simulation of N two-level atoms coupled to a driven, dissipative cavity
//! mode: master-equation dynamics, steady states, and the atomic quantum
//! correlations (purity, discord, entanglement of formation) together with
//! the photon statistics of the field.

pub mod correlations;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod operator;
pub mod scenario;
mod sparse;

pub use error::{Error, Result};
