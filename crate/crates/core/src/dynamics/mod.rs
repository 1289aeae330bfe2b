//! Continuous-time hidden-state dynamics: a neural vector field integrated
//! between events, gated jumps at events and a positive growth-rate readout
//! whose integral yields the dynamic cues.

pub mod model;
pub mod solver;

pub use model::{CueMode, DynamicsOutput, EncodeOptions, Gru, OdeDynamics, Trajectory};
pub use solver::{integrate, FnSystem, OdeSystem, SolverMethod, SolverSpec};
