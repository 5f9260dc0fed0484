//! Synchronization and entanglement of two mechanical oscillators sharing one
//! modulated cavity mode.

// `!(x > 0.0)` is used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod covariance;
pub mod error;
pub mod floquet;
pub mod io;
pub mod meanfield;
pub mod ode;
pub mod params;
pub mod quadrature;
pub mod spectrum;
pub mod sweep;

pub use error::{Error, Result};
