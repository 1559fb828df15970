//! Demand-flexibility capacity of thermostatic loads, expressed as an optimal
//! spectral density of the power deviation.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectra`]: frequency grids, spectral densities, periodograms and indicator bases.
//! - [`signalgen`]: colored-noise synthesis for a target spectral density.
//! - [`loads`]: thermal load models and the quality-of-service channels.
//! - [`capacity`]: Chebyshev bounds, constraint maps (model and data), the QP and validation.
//! - [`refsd`]: the reference (balancing-authority) spectral density pipeline.

pub mod capacity;
pub mod error;
pub mod loads;
pub mod refsd;
pub mod rng;
pub mod signalgen;
pub mod spectra;

pub use error::{FlexError, Result};
