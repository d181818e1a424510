use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("exact tie between entries {first} and {second}; pass a jitter seed to break ties")]
    TiesPresent { first: usize, second: usize },
    #[error("dataset needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("dataset needs at least 1 column")]
    NoColumns,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column name `{0}` must be non-empty and match [A-Za-z0-9_]")]
    InvalidColumnName(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("ranks are not a permutation of 1..={0}")]
    NotAPermutation(usize),
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    InvalidEdge(usize, usize),
    #[error("edge set contains a directed cycle")]
    Cyclic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("ill-posed regression: need n > p, got n = {n}, p = {p}")]
    IllPosed { n: usize, p: usize },
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    DidNotConverge {
        iterations: usize,
        gradient_norm: f64,
        /// Best iterate reached, as a flat coefficient vector.
        best_beta: Vec<f64>,
        best_objective: f64,
    },
    #[error("pivot column {0} is constant")]
    DegeneratePivot(usize),
    #[error("pivot index {pivot} out of range for p = {p}")]
    InvalidPivot { pivot: usize, p: usize },
    #[error("no bracket for F_beta inverse at u = {0}")]
    BracketFailure(f64),
    #[error("transform estimate has no point for y = {0}")]
    MissingTransformPoint(f64),
    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum HsicError {
    #[error("gram dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("gram matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("HSIC needs at least 2 samples")]
    TooFewSamples,
}

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("residuals unavailable for node {target}: {reason}")]
    ResidualsUnavailable { target: usize, reason: String },
    #[error("n > expanded dimension required: n = {n}, expanded dimension = {dim}")]
    InsufficientSamples { n: usize, dim: usize },
    #[error("ordering failed: every candidate fit failed among {0:?}")]
    OrderingFailed(Vec<usize>),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("dimension mismatch: ordering has {ordering} nodes, graph has {graph}")]
    DimensionMismatch { ordering: usize, graph: usize },
    #[error(transparent)]
    Hsic(#[from] HsicError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
