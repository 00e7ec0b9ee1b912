use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("incompatible Neumann source: mean {mean:e} exceeds {tol:e}")]
    IncompatibleSource { mean: f64, tol: f64 },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    PoissonNotConverged { iterations: usize, residual: f64 },

    #[error("Sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    SinkhornNotConverged { iterations: usize, marginal_error: f64 },

    #[error("time step underflow: dt = {0:e}")]
    TimeStepUnderflow(f64),
}
