use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix is rank deficient (|R[{column},{column}]| = {value:e})")]
    RankDeficient { column: usize, value: f64 },

    #[error("kernel matrix is singular at frequency ({u}, {v})")]
    RankDeficientFrequency { u: usize, v: usize },

    #[error("inverse transform left imaginary residue {imag:e} (real scale {real:e})")]
    ImaginaryResidue { imag: f64, real: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("reconstruction targets are required when alpha > 0")]
    MissingReconTargets,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("container has magic {found:?}, expected {expected:?}")]
    BadContainerMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{what}: truncated, expected {expected} bytes, found {found}")]
    TruncatedFile {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unit {unit}: {source}")]
    AtUnit {
        unit: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("instance {index}: {source}")]
    AtInstance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn at_unit(self, unit: usize) -> Self {
        Error::AtUnit {
            unit,
            source: Box::new(self),
        }
    }

    pub fn at_instance(self, index: usize) -> Self {
        Error::AtInstance {
            index,
            source: Box::new(self),
        }
    }

    /// Strips unit/instance annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtUnit { source, .. } | Error::AtInstance { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures raised by the linear solvers.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::NotPositiveDefinite { .. }
                | Error::RankDeficient { .. }
                | Error::RankDeficientFrequency { .. }
                | Error::ImaginaryResidue { .. }
        )
    }
}
