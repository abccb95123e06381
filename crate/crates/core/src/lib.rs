//! Forced-response estimation from internal fluctuations.
//!
//! The pipeline: resample fields onto an icosahedral mesh ([`grid`]), remove
//! the ensemble climatology ([`dataio`]), train one emulator per lag
//! ([`emulator`]), and integrate perturbed-minus-unperturbed emulator outputs
//! over lags ([`fdt`]) for regional forcing scenarios ([`scenario`]).
//! [`synth`] provides linear stochastic systems whose forced response is known
//! exactly, so every estimator can be checked against ground truth.

pub mod binio;
pub mod dataio;
pub mod emulator;
pub mod error;
pub mod eval;
pub mod fdt;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod scenario;
pub mod synth;

pub use error::{Error, Result};
pub use field::NodeField;

/// Seed used whenever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;
