use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so the CLI can map them onto its exit-code taxonomy:
/// usage errors (bad arguments, malformed requests), I/O and format errors,
/// and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{role} contains non-finite entries")]
    NonFinite { role: String },

    #[error("eigendecomposition of {role} failed to converge")]
    EigenFailure { role: String },

    #[error("{role} is not positive definite (offending eigenvalue {eig:.3e})")]
    NotPositiveDefinite { role: String, eig: f64 },

    #[error(
        "projected scatter {role} is numerically zero (retains {fraction:.3e} of the ambient \
         scatter trace); sample more pairs or reduce the rank"
    )]
    DegenerateProjection { role: String, fraction: f64 },

    #[error("retraction failed: U + step*xi is rank deficient (step too large along a degenerate direction)")]
    RankDeficientRetraction,

    #[error("non-finite {what} at solver iterate {iter}")]
    NonFiniteIterate { what: &'static str, iter: usize },

    #[error("line search exhausted {evals} evaluations without satisfying the decrease condition")]
    LineSearchExhausted { evals: usize },

    #[error("numerical check failed: {0}")]
    NumericalCheckFailed(String),

    #[error("full-rank baseline refused: d = {d} exceeds the dense guard {guard}; use the low-rank solver")]
    DenseGuard { d: usize, guard: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("model file {path}: {msg}")]
    ModelFormat { path: String, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Classifies the error for the CLI exit-code taxonomy:
    /// 1 = usage, 2 = I/O or file format, 3 = numerical.
    pub fn exit_class(&self) -> u8 {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::ModelFormat { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
