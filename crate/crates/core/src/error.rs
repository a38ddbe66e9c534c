use thiserror::Error;

/// Errors raised by the measure, transport and alignment routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("degenerate support: all points coincide, scale is undefined")]
    DegenerateSupport,

    #[error("marginals are infeasible: sums differ ({0} vs {1})")]
    InfeasibleMarginals(f64, f64),

    #[error("{solver} did not converge after {iterations} iterations")]
    NonConvergence { solver: &'static str, iterations: usize },

    #[error("numerical underflow in {0}")]
    NumericalUnderflow(&'static str),

    #[error("SVD did not converge after {0} sweeps")]
    SvdFailure(usize),

    #[error("neighbor graph is disconnected")]
    Disconnected,

    #[error("Fiedler eigenvalue is repeated ({0} vs {1}); direction ill-defined")]
    EigenMultiplicity(f64, f64),

    #[error("covariance has repeated eigenvalues; principal axes are ill-defined")]
    DegenerateCovariance,

    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("zero weight at barycenter point {0}")]
    ZeroWeight(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("no points in cloud after reading {0}")]
    EmptyCloud(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl Error {
    /// True for the failures that signal an iteration cap was hit rather than
    /// bad input.
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::SvdFailure(_) | Error::NumericalUnderflow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
