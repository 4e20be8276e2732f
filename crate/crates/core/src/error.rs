use thiserror::Error;

/// Errors produced by the volume, weight-map and metric routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid intensity window [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidWindow { lo: f64, hi: f64 },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid tiling: {0}")]
    Tiling(String),

    #[error("invalid cube kernel size {0}: must be odd, positive and at most twice the largest extent")]
    Kernel(i64),

    #[error("{0} mask is empty")]
    EmptyMask(&'static str),

    #[error("distance transform needs at least one seed voxel")]
    NoSeeds,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("image is not normalized to [0, 1]: {0}")]
    Normalization(String),

    #[error("invalid NIfTI data: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mask holds non-binary value {0}")]
    MaskDomain(f64),

    #[error("phantom geometry: {0}")]
    Geometry(String),

    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Reading or writing files failed, or a file is not a usable volume.
    Io,
    /// Inputs or parameters are inconsistent with each other.
    Validation,
    /// Inputs are well-formed but a computation cannot proceed on them.
    Precondition,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Unsupported(_) => ErrorClass::Io,
            Error::EmptyMask(_) | Error::NoSeeds | Error::Precondition(_) | Error::Geometry(_) => {
                ErrorClass::Precondition
            }
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
