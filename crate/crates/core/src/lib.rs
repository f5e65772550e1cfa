//! Spiking neurons built from a cascade of leaky buckets (a discrete gamma
//! kernel family) with sigma-delta spike coding, trained by an analytic
//! per-timestep gradient rule.

pub mod error;
pub mod kernel;
pub mod learning;
pub mod network;
pub mod runtime;
pub mod sigma_delta;
pub mod tasks;

pub use error::{Error, Result};
