use thiserror::Error;

/// Errors raised by dyadic matrix construction, estimation and permutation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square: {rows} rows, row {row} has {cols} columns")]
    NotSquare { rows: usize, row: usize, cols: usize },

    #[error("matrix has {n} units; at least 3 are required")]
    TooSmall { n: usize },

    #[error("entry ({i}, {j}) is not finite")]
    NonFiniteEntry { i: usize, j: usize },

    #[error("entries ({i}, {j}) and ({j}, {i}) differ by {diff:e}, beyond the symmetry tolerance")]
    AsymmetricBeyondTolerance { i: usize, j: usize, diff: f64 },

    #[error("diagonal entry ({i}, {i}) is {value}, expected 0")]
    NonzeroDiagonal { i: usize, value: f64 },

    #[error("permutation has length {got}, expected {expected}")]
    PermutationLengthMismatch { expected: usize, got: usize },

    #[error("permutation is not a bijection on 0..{n}")]
    NotBijection { n: usize },

    #[error("dimension mismatch: expected n = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate matrix `{which}`: off-diagonal entries have (numerically) zero variance")]
    DegenerateMatrix { which: String },

    #[error("zero variance estimate; the first-order projection is degenerate")]
    ZeroVariance,

    #[error("singular design: covariance condition number {condition:e} exceeds 1e12")]
    SingularDesign { condition: f64 },

    #[error("singular variance matrix for the tested coefficients")]
    SingularVariance,

    #[error("the Sen-corrected first-order variance needs n > 4 (got n = {n})")]
    CorrectionUnavailable { n: usize },

    #[error("design needs at least one focal regressor")]
    NoFocalRegressor,

    #[error("permutation budget {n_reps} is below the Monte Carlo minimum of 100")]
    BudgetTooSmall { n_reps: usize },

    #[error("empty replicate set")]
    EmptyReplicates,

    #[error("no closed-form reference law for this model/statistic combination")]
    NoClosedForm,

    #[error("unknown model specification: {0}")]
    UnknownSpec(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("conflicting duplicate edge ({i}, {j}): {first} vs {second}")]
    ConflictingDuplicateEdge { i: String, j: String, first: f64, second: f64 },

    #[error("self loop on `{label}` with nonzero weight {weight}")]
    SelfLoop { label: String, weight: f64 },

    #[error("unknown unit label `{0}`")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("non-finite value in report field `{0}`")]
    NonFiniteReport(String),
}

impl Error {
    /// True for failures caused by the numbers themselves (singular or degenerate inputs)
    /// as opposed to malformed or invalid data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateMatrix { .. }
                | Error::ZeroVariance
                | Error::SingularDesign { .. }
                | Error::SingularVariance
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
