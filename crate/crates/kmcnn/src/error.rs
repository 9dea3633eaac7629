use std::path::Path;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// The CLI maps these onto process exit codes: `Io` exits 1, `GradCheck`
/// exits 3, everything else exits 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file did not match its expected syntax. Carries the location.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Structurally valid input that violates a semantic rule
    /// (duplicate ids, self-loops, bad field values, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A reference to something that does not exist (edge endpoints,
    /// manifest pmids, unknown concept or token ids).
    #[error("unresolved reference: {0}")]
    Lookup(String),

    /// A serialized artifact has the wrong layout: bad magic bytes, header
    /// mismatch, truncated payload, malformed record.
    #[error("bad format: {0}")]
    Format(String),

    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Bad configuration value or unknown configuration key.
    #[error("bad config: {0}")]
    Config(String),

    /// The data itself makes the requested operation impossible
    /// (empty training set, single-label training set, pool too small).
    #[error("unusable data: {0}")]
    Data(String),

    /// Artifacts that must agree do not (vocabulary hash vs checkpoint,
    /// prediction/gold alignment, incompatible embedding dimensions).
    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    /// Analytic and numerical gradients disagree beyond tolerance.
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl Error {
    /// Process exit code the CLI reports for this error: 1 for I/O
    /// failures, 3 for gradient-check failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::GradCheck(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
