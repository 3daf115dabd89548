use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("truncation is not unitary: eigenvalue modulus {modulus} outside [1-1e-8, 1+1e-8]")]
    NotUnitary { modulus: f64 },
    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SingularSystem { residual: f64, tolerance: f64 },
    #[error("zeros estimator undefined at zero coupling: every zero of the monic polynomial sits at the origin")]
    DegenerateZeros,
    #[error("smallness gate failed: {0}")]
    SmallnessGate(String),
    #[error("KAM step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },
    #[error("bisection failed to bracket: {0}")]
    Bracket(String),
    #[error("Mobius denominator collapsed to {0:e}")]
    DenominatorCollapse(f64),
    #[error("eigenvalue routine did not converge for size {0}")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
