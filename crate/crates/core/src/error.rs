use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid estimating spec: {0}")]
    InvalidSpec(String),
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("infeasible calibration constraints: {0}")]
    InfeasibleConstraints(String),
    #[error("rank-deficient calibration constraints: {0}")]
    RankDeficientConstraints(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("asymmetric covariance: {0}")]
    AsymmetricCovariance(String),
    #[error("singular block in variance decomposition: {0}")]
    SingularBlock(String),
    #[error("degenerate density-ratio targets: {0}")]
    DegenerateTargets(String),
    #[error("infeasible CML state: {0}")]
    InfeasibleState(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("non-numeric cell at row {row}, column {column}")]
    NonNumericCell { row: usize, column: String },
    #[error("non-positive weight at row {row}")]
    WeightNonPositive { row: usize },
    #[error("row {row}: weight {weight} does not match 1/pi = {expected}")]
    InclusionMismatch { row: usize, weight: f64, expected: f64 },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable code, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::InvalidSample(_) => "InvalidSample",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::SingularJacobian(_) => "SingularJacobian",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InfeasibleConstraints(_) => "InfeasibleConstraints",
            Error::RankDeficientConstraints(_) => "RankDeficientConstraints",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::AsymmetricCovariance(_) => "AsymmetricCovariance",
            Error::SingularBlock(_) => "SingularBlock",
            Error::DegenerateTargets(_) => "DegenerateTargets",
            Error::InfeasibleState(_) => "InfeasibleState",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::WeightNonPositive { .. } => "WeightNonPositive",
            Error::InclusionMismatch { .. } => "InclusionMismatch",
            Error::SchemaError(_) => "SchemaError",
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::Io(_) => "Io",
        }
    }

    /// The subsystem that raised the error, used to qualify error records.
    pub fn module(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_)
            | Error::NonFiniteInput(_)
            | Error::InvalidSample(_)
            | Error::InvalidSpec(_)
            | Error::SingularJacobian(_)
            | Error::NoConvergence { .. } => "domain_core",
            Error::InfeasibleConstraints(_) | Error::RankDeficientConstraints(_) => {
                "el_calibration"
            }
            Error::SingularCovariance(_) | Error::AsymmetricCovariance(_) => "benchmark_fusion",
            Error::SingularBlock(_) => "inference",
            Error::DegenerateTargets(_) => "propensity",
            Error::InfeasibleState(_) => "cml_baseline",
            Error::InvalidScenario(_) => "sim_harness",
            Error::MalformedHeader(_)
            | Error::NonNumericCell { .. }
            | Error::WeightNonPositive { .. }
            | Error::InclusionMismatch { .. }
            | Error::SchemaError(_)
            | Error::Io(_) => "cli_io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
