use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("cannot represent field `{field}` in {format}: {reason}")]
    Unrepresentable {
        field: &'static str,
        format: &'static str,
        reason: String,
    },
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not enough points: need more than {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },
    #[error("scene `{0}` has no labels")]
    MissingLabels(String),
    #[error("scene `{0}` has no colors")]
    MissingColors(String),
    #[error("label space: {0}")]
    LabelSpace(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("all points are ignored")]
    AllIgnored,
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
