//! Neural-network patching for concept-drift adaptation.
//!
//! The crate is split into four layers:
//!
//! - [`nncore`]: a small feed-forward network engine (dense, conv, pooling,
//!   dropout, softmax) with per-layer activation taps.
//! - [`streams`]: IDX ingestion and drift scenario generation.
//! - [`adaptation`]: patch and error-estimator networks, the patching
//!   variants and the transfer-learning baselines.
//! - [`eval`]: the prequential harness, evaluation measures and sweeps.

pub mod adaptation;
pub mod error;
pub mod eval;
pub mod nncore;
pub mod seed;
pub mod streams;

pub use error::{Error, Result};
