//! Simulation and learning stack for inferring slow latent degradation from
//! fast operational sensor data.
//!
//! * [`beamsim`] generates run-to-failure trajectories of a degrading,
//!   simply supported bridge beam.
//! * [`datasets`] turns trajectories into two-rate slow/fast windows.
//! * [`hcde`] is the hierarchical controlled differential equation model,
//!   built on [`autodiff`], [`odeint`] and [`paths`].
//! * [`baseline`] is the healthy-phase residual model it is compared to.
//! * [`eval`] scores embeddings against ground-truth damage.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline;
pub mod beamsim;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod hcde;
pub mod odeint;
pub mod paths;

pub use error::{Error, Result};
