use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error type for operational failures.
///
/// Programmer errors (shape mismatches, out-of-contract arguments) panic
/// instead; everything a caller can plausibly recover from or report is here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A config or data file did not parse against its schema.
    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    /// A parsed value violates a documented invariant.
    #[error("invalid {field}: {detail}")]
    Validation { field: String, detail: String },

    /// The battery cannot deliver the requested terminal power.
    #[error("battery power limit exceeded: {requested_w:.1} W is not deliverable")]
    PowerLimit { requested_w: f64 },

    /// A spatial step degenerated (average speed at or below the stall threshold).
    #[error("infeasible spatial step: average speed at or below stall threshold")]
    StalledStep,

    /// The gap recursion is undefined for a non-moving ego step.
    #[error("gap step undefined: ego average speed is zero")]
    UndefinedGapStep,

    #[error("no feasible plan from position index {position_index}: {detail}")]
    InfeasibleSolve { position_index: usize, detail: String },

    #[error("safety violation at {position_m:.1} m, t = {time_s:.2} s: {detail}")]
    SafetyViolation {
        position_m: f64,
        time_s: f64,
        detail: String,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn validation(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
