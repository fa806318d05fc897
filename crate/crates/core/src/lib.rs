//! Simulation and analysis toolkit for measurement-based feedback cooling of a
//! thermally driven nanomechanical oscillator with interferometric readout.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the domain types and every closed-form expression
//!   (decoherence rates, occupancies, susceptibilities, noise budgets, device
//!   scaling laws).
//! * [`sim`] integrates the closed-loop Langevin dynamics in the time domain,
//!   including the bandpass + delay feedback path.
//! * [`spectral`] estimates power spectral densities, bootstraps the
//!   displacement calibration and fits the closed-loop spectrum model.
//! * [`experiments`] runs power, gain and temperature sweeps and device design
//!   reports.
//! * [`config`] parses unit-annotated JSON run configurations.

// `!(x >= 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constants;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod sim;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
