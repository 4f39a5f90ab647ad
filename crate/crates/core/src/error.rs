use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration or argument value is outside its allowed range.
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Tensor or grid dimensions are incompatible with an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A coordinate or argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A request would exceed a configured resource cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A computation produced a NaN or infinity.
    #[error("numeric fault in {term} at iteration {iteration}: value {value}")]
    NumericFault {
        term: String,
        iteration: usize,
        value: f64,
    },

    /// Statistical test on a sample with zero variance.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("missing file for sample `{id}`: {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("checksum mismatch for sample `{id}` ({path})")]
    ChecksumMismatch { id: String, path: PathBuf },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    /// A training or evaluation failure annotated with where it happened.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for faults caused by the numbers rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::NumericFault { .. })
    }
}
