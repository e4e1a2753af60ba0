use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("network simplex stalled after {iterations} pivots: {detail}")]
    SolverStalled { iterations: usize, detail: String },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal error {marginal_error:.3e})")]
    Convergence { iterations: usize, marginal_error: f64 },

    #[error("batch entry ({s}, {t}) is already solved")]
    DoubleSolve { s: usize, t: usize },

    #[error("infeasible mask: {0}")]
    InfeasibleMask(String),

    #[error("missing dual potentials for batch pair ({s}, {t})")]
    MissingDuals { s: usize, t: usize },

    #[error("dual kind error: {0}")]
    DualKind(String),

    #[error("uniform batch mass violated: {0}")]
    Assumption(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("degenerate aspect ratio: {0}")]
    DegenerateAspectRatio(String),

    #[error("missing sub-plan for supported batch pair ({s}, {t})")]
    MissingSubPlan { s: usize, t: usize },

    #[error("unequal sample sizes: {n} vs {m}")]
    UnequalSamples { n: usize, m: usize },

    #[error("statistic failed on resample {resample}: {source}")]
    Statistic {
        resample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
