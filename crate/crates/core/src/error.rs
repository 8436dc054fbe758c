use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty feasible set")]
    EmptyFeasibleSet,
    #[error("empty reaction set for agent {agent}")]
    EmptyReactionSet { agent: usize },
    #[error("max iterations ({iterations}) reached")]
    MaxIterations { iterations: usize, best: Vec<f64> },
    #[error("hessian is not positive definite on the working subspace")]
    SingularHessian,
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("no stabilizing solution")]
    NoStabilizingSolution,
    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("oracle scale exceeded: dimension {0} > 3")]
    OracleScaleExceeded(usize),
    #[error("not converged after {0} iterations")]
    NotConverged(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBreakdown(format!("non-finite value in {context}")))
    }
}
