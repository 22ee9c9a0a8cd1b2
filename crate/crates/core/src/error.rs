use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("too small: {0}")]
    TooSmall(String),
    #[error("indivisible: {0}")]
    Indivisible(String),
    #[error("overlap too large: delta={delta} must be < subdomain width {width}")]
    OverlapTooLarge { delta: usize, width: usize },
    #[error("delta must be even, got {0}")]
    OddOverlap(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch for local ({i},{k}): expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        i: usize,
        k: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("subdomain {j} is not adjacent to {i}")]
    NotAdjacent { i: usize, j: usize },
    #[error("cfl violation: courant number {0} > 1")]
    CflViolation(f64),
    #[error("missing trace: {0}")]
    MissingTrace(String),
    #[error("observation location {0} outside the open domain")]
    OutOfDomain(f64),
    #[error("singular system")]
    Singular,
    #[error("cg did not converge: residual {residual:e} after {iters} iterations")]
    CgNoConvergence { residual: f64, iters: usize },
    #[error("zero matrix: {0}")]
    ZeroMatrix(String),
    #[error("mismatched instance: {0}")]
    MismatchedInstance(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors raised while validating input rather than while solving.
    pub fn is_config(&self) -> bool {
        !matches!(
            self,
            Error::NotSpd
                | Error::Singular
                | Error::CgNoConvergence { .. }
                | Error::ZeroMatrix(_)
                | Error::MismatchedInstance(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
