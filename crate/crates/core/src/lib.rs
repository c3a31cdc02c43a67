//! Spatial-temporal forecasting with entity-inductive, linear-cost latent
//! attention.
//!
//! The crate is organised bottom-up:
//!
//! * [`compute`]: tensors, a reverse-mode tape, Adam, gradient checking.
//! * [`model`]: the latent-attention forecaster and its baselines.
//! * [`data`]: dataset storage, CSV import, splits, windows, synthetic data
//!   and entity-set scenarios.
//! * [`train`]: training loop, checkpoints and forecast metrics.
//! * [`analysis`]: linear CKA, the scaling benchmark and sensitivity sweeps.

pub mod analysis;
pub mod compute;
pub mod data;
mod error;
pub mod model;
pub mod par;
pub mod train;

pub use error::{Error, Result};
