use std::path::PathBuf;

/// Errors produced anywhere in the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or invalid configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two operands whose shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Geometry that makes an operator singular (a source or receiver on a cell).
    #[error("degenerate geometry: {0}")]
    Geometry(String),

    /// An iterative method stopped before reaching its tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// A matrix that cannot be factored or inverted.
    #[error("singular system: {0}")]
    Singular(String),

    /// The subspace dimension exceeds the numerical rank of the data operator.
    #[error("rank deficient: singular value {index} is {value:e}, below {threshold:e}")]
    RankDeficient { index: usize, value: f64, threshold: f64 },

    /// Malformed file contents.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// IDX magic number mismatch.
    #[error("bad IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { found: u32, expected: u32 },

    /// A payload shorter than its header declares.
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// Header dimensions whose product does not fit in memory.
    #[error("dimension overflow: {0:?}")]
    DimOverflow(Vec<u64>),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Geometry(_) => "geometry",
            Error::Convergence { .. } => "convergence",
            Error::Singular(_) => "singular",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Format { .. } => "format",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::DimOverflow(_) => "dim_overflow",
            Error::NonFinite { .. } => "non_finite",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
