use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is numerically singular at pivot {pivot}")]
    SingularMatrix { pivot: usize },
    #[error("tensor field is not positive definite at location {index} (eigenvalue {eigenvalue:e})")]
    NotPosDef { index: usize, eigenvalue: f64 },
    #[error("inner quadratic problem is not positive definite: {0}")]
    IndefiniteInnerProblem(String),
    #[error("Newton did not converge at continuation step {step} (residual {residual_norm:e})")]
    NonConvergence { step: usize, residual_norm: f64 },
    #[error("no feasible sample: {0}")]
    Infeasible(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("unsupported material coupling: {0}")]
    UnsupportedCoupling(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
