use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty observation: no events at or before t_o = {t_obs}")]
    EmptyObservation { t_obs: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("supercritical cascade parameters: branching ratio {branching} must be < 1")]
    Supercritical { branching: f64 },

    #[error("too few samples after filtering: {count} (need at least 3)")]
    TooFewSamples { count: usize },

    #[error("step size underflow integrating over [{t_from}, {t_to}] at t = {t}")]
    StepSizeUnderflow { t_from: f64, t_to: f64, t: f64 },

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),

    #[error("unknown solver `{0}`; expected one of bosh3, adaptive_heun, euler, rk4, implicit_adams, midpoint, dopri5")]
    UnknownSolver(String),

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
