use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("inconsistent kernel: squared distance {0} is negative")]
    InconsistentKernel(f64),
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("cluster index {index} out of range for {count} clusters")]
    InvalidCluster { index: usize, count: usize },
    #[error("fingerprint mismatch: map {map:#018x}, codebook {codebook:#018x}")]
    FingerprintMismatch { map: u64, codebook: u64 },
    #[error("fold {fold} has no training example of class {class}")]
    FoldMissingClass { fold: usize, class: u32 },
    #[error("singular linear system")]
    Singular,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numbers rather than the shape of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotSpd
                | Error::InconsistentKernel(_)
                | Error::DegenerateKernel(_)
                | Error::Singular
                | Error::NonFinite
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
