//! Information-cascade popularity prediction.
//!
//! The pipeline extracts structural and temporal features from an observed
//! cascade, evolves a growth-rate hidden state with a neural ODE, generates the
//! segmented future popularity with a conditional diffusion model and fuses
//! both into the final incremental-popularity estimate.

pub mod attention;
pub mod data;
pub mod diffusion;
pub mod dynamics;
pub mod embed;
pub mod error;
pub mod harness;
pub mod nn;
pub mod predictor;
pub mod tape;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
