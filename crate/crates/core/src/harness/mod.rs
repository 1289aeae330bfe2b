//! Experiment harness: configuration, data preparation, training,
//! evaluation, checkpoints and the ablation and sweep drivers.

pub mod ablate;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod model;
pub mod prepare;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Variant};
pub use evaluate::{evaluate_split, EvalReport};
pub use model::{CasftModel, Runtime};
pub use prepare::{prepare, prepare_from, PreparedData, PreparedSample};
pub use train::{init_model, train, EpochLog, TrainOutcome};
pub use ablate::{ablate, AblationRow};
pub use baseline::{baseline_feature_mlp, FeatureBaseline};
pub use sweep::{sweep, SweepAxis, SweepRow};
