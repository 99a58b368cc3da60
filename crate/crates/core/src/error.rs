use thiserror::Error;

/// Error raised when a data expression cannot be evaluated at a point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed: {0}")]
pub struct EvalError(pub String);

/// Which nested loop of a solver ran out of iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Picard,
    Uzawa,
    Cg,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Picard => f.write_str("picard"),
            Stage::Uzawa => f.write_str("uzawa"),
            Stage::Cg => f.write_str("cg"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinghamError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    /// A type invariant was violated at construction; the message names it.
    #[error("invalid {what}: {reason}")]
    Invariant { what: &'static str, reason: String },
    #[error("yield stress must be nonnegative, found {value} in cell ({i}, {j})")]
    NegativeYield { i: usize, j: usize, value: f64 },
    #[error("weight field must be nonnegative")]
    NegativeWeight,
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("{stage} loop did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence {
        stage: Stage,
        iters: usize,
        residual: f64,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl BinghamError {
    pub(crate) fn invariant(what: &'static str, reason: impl Into<String>) -> Self {
        BinghamError::Invariant {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = BinghamError> = std::result::Result<T, E>;
