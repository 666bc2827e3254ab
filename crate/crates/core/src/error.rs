use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("rewrite system did not terminate within {steps} steps")]
    NonTerminatingRewrite { steps: usize },
    #[error("rewrite rules are not confluent on the overlap {0}")]
    NonConfluent(String),
    #[error("zero element has no index")]
    ZeroElement,
    #[error("basis dimension {dim} exceeds the cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },
    #[error("no moment given for word {0}")]
    MissingMoment(String),
    #[error("moment data is not hermitian: deviation {deviation:.3e} exceeds {limit:.3e}")]
    NonHermitian { deviation: f64, limit: f64 },
    #[error("functional is not flat: rank on C is {rank_c}, rank on B is {rank_b}")]
    NotFlat { rank_c: usize, rank_b: usize },
    #[error("Gram matrix on B' is singular (condition number {condition:.3e})")]
    SingularGram { condition: f64 },
    #[error("product {0} leaves the span of C")]
    EscapesC(String),
    #[error("representation matrices violate relation {index}: residual {residual:.3e}")]
    RelationViolation { index: usize, residual: f64 },
    #[error("multiplication operators are not jointly diagonalizable: residual {residual:.3e}")]
    NonCommutingOps { residual: f64 },
    #[error("recovered weight {weight:.3e} is negative")]
    NegativeWeight { weight: f64 },
    #[error("{found} distinct x-projections exceed the bound {bound}")]
    BoundViolation { found: usize, bound: usize },
    #[error("central operators are not diagonalizable: residual {residual:.3e}")]
    CenterNotDiagonalizable { residual: f64 },
    #[error("Gram matrix on B' is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    GramNotPD { min_eigenvalue: f64 },
    #[error("operation needs a {expected} presentation, got {found}")]
    WrongKind { expected: &'static str, found: &'static str },
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::Parse(_) => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Io(_) => "IoError",
            Error::NonTerminatingRewrite { .. } => "NonTerminatingRewrite",
            Error::NonConfluent(_) => "NonConfluent",
            Error::ZeroElement => "ZeroElement",
            Error::DimensionOverflow { .. } => "DimensionOverflow",
            Error::MissingMoment(_) => "MissingMoment",
            Error::NonHermitian { .. } => "NonHermitian",
            Error::NotFlat { .. } => "NotFlat",
            Error::SingularGram { .. } => "SingularGram",
            Error::EscapesC(_) => "EscapesC",
            Error::RelationViolation { .. } => "RelationViolation",
            Error::NonCommutingOps { .. } => "NonCommutingOps",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::BoundViolation { .. } => "BoundViolation",
            Error::CenterNotDiagonalizable { .. } => "CenterNotDiagonalizable",
            Error::GramNotPD { .. } => "GramNotPD",
            Error::WrongKind { .. } => "WrongKind",
        }
    }

    /// Process exit status for this failure: 2 not flat, 3 a hypothesis or
    /// certificate failure, 4 bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotFlat { .. } => 2,
            Error::SingularGram { .. }
            | Error::EscapesC(_)
            | Error::NonCommutingOps { .. }
            | Error::NegativeWeight { .. }
            | Error::BoundViolation { .. }
            | Error::CenterNotDiagonalizable { .. }
            | Error::GramNotPD { .. } => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
