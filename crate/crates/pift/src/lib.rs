//! Physics-informed functional priors over unknown fields.

pub mod analytic;
pub mod basis;
pub mod bvp;
pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod findiff;
pub mod grid;
pub mod inference;
pub mod kernel;
pub mod sampler;
pub mod par;

pub use error::{PiftError, Result};
