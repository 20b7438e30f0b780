use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel evaluation is not finite at x = {x}, y = {y} (value {value})")]
    KernelEvaluation { x: f64, y: f64, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("constraints infeasible within the coefficient box (best max residual {best_residual:e}, tolerance {tolerance:e})")]
    Infeasible { best_residual: f64, tolerance: f64 },

    #[error("iteration diverged at step {iteration} (norm {norm:e}); try a smaller mixing parameter")]
    Divergence { iteration: usize, norm: f64 },

    #[error("linear solve failed: {0}")]
    LinearAlgebra(String),

    #[error("self-consistent outer iteration {outer}: {source}")]
    Outer {
        outer: usize,
        #[source]
        source: Box<Error>,
    },
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
