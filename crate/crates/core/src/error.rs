use std::path::PathBuf;

use thiserror::Error;

use crate::param::MethodKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A logarithm or arctangent term of the prism kernel was not finite.
    #[error("kernel evaluation failed at corner (p={}, l={}, s={}): {detail}", corner.0, corner.1, corner.2)]
    KernelDomain {
        corner: (usize, usize, usize),
        detail: String,
    },

    #[error("sensitivity entry (station {station}, cell {cell}): {source}")]
    Sensitivity {
        station: usize,
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid regularizer: entry {index} is {value} (must be finite and > 0)")]
    InvalidRegularizer { index: usize, value: f64 },

    #[error("SVD failed for {rows}x{cols} matrix: {detail}")]
    Svd {
        rows: usize,
        cols: usize,
        detail: String,
    },

    #[error("dense factorization failed: {0}")]
    Factorization(String),

    /// The root function of a discrepancy-type selector never changes sign on
    /// the search bracket. When `residual_norm_sq <= m` the data are already fit
    /// at the noise level.
    #[error("{method} has no root in [{lo:e}, {hi:e}]: |s|^2 = {residual_norm_sq}, m = {m}")]
    NoRoot {
        method: MethodKind,
        lo: f64,
        hi: f64,
        residual_norm_sq: f64,
        m: usize,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite model update at cell {cell}")]
    NonFinite { cell: usize },

    #[error("all {copies} copies failed; first: {first}")]
    AllCopiesFailed {
        copies: usize,
        #[source]
        first: Box<Error>,
    },

    #[error("invalid synthetic model: {0}")]
    Spec(String),

    #[error("noise standard deviation is zero at datum {index}")]
    ZeroSigma { index: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error{}: {key}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Iteration { .. } => e,
            e => Error::Iteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through iteration, sensitivity and study context.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Iteration { source, .. } | Error::Sensitivity { source, .. } => {
                source.root_cause()
            }
            Error::AllCopiesFailed { first, .. } => first.root_cause(),
            e => e,
        }
    }
}
