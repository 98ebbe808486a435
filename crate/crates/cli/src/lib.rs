//! Config-driven experiment driver: simulation, H-CDE and residual
//! training, ablations, the slow-step sweep and evaluation reports.

pub mod commands;
pub mod config;
pub mod pipeline;
