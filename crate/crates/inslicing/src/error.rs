//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimensions do not match what an operation expects.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A performance evaluator (surrogate or ground truth) failed.
    #[error("evaluation failed: {0}")]
    Evaluation(String),

    /// Training loss became non-finite; the last stable step is reported.
    #[error("training diverged at step {step} (last stable loss {last_loss})")]
    TrainingDiverged { step: usize, last_loss: f64 },

    /// Kernel matrix could not be factorized even after jitter escalation.
    #[error("ill-conditioned kernel matrix (jitter escalated to {jitter})")]
    IllConditioned { jitter: f64 },

    /// Trust-region model predicted no reduction; the iteration cannot proceed.
    #[error("degenerate trust-region subproblem: predicted reduction {predicted}")]
    DegenerateSubproblem { predicted: f64 },

    /// Scenario generation could not find a feasible configuration.
    #[error("scenario generation failed: {0}")]
    ScenarioGeneration(String),

    /// Invalid problem specification or parameters.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Malformed config, dataset, or model file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
