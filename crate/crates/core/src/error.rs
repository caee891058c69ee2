use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (matrix max-norm {norm:e})")]
    EigenNoConvergence { sweeps: usize, norm: f64 },

    #[error("QR iteration on companion matrix did not converge (degree {degree})")]
    RootsNoConvergence { degree: usize },

    #[error("interpolation nodes {i} and {j} coincide ({value})")]
    DuplicateNodes { i: usize, j: usize, value: f64 },

    #[error("Vandermonde system is ill-conditioned (relative residual {residual:e}); spread the nodes wider")]
    IllConditioned { residual: f64 },

    #[error("polynomial is identically zero")]
    ZeroPolynomial,

    #[error("complex root pair {re} ± {im}i exceeds the real-root tolerance")]
    ComplexRoots { re: f64, im: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ambiguous degree deficiency: trailing coefficient magnitudes {magnitudes:?} straddle the trim tolerance")]
    AmbiguousDegree { magnitudes: Vec<f64> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("IDX magic mismatch in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("IDX file {path} truncated: expected {expected} bytes, found {actual}")]
    IdxTruncated {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by
    /// configuration or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::RootsNoConvergence { .. }
                | Error::IllConditioned { .. }
                | Error::ComplexRoots { .. }
                | Error::Domain(_)
                | Error::AmbiguousDegree { .. }
                | Error::NonFinite(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::IdxMagic { .. }
                | Error::IdxTruncated { .. }
                | Error::IdxCountMismatch { .. }
                | Error::Checkpoint(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
