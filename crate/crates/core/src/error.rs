use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology parameters: {0}")]
    Topology(String),

    #[error("incompatible topologies for transfer: {0}")]
    Transfer(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("non-finite {what} in layer {layer} during training step {step}")]
    NonFinite {
        what: &'static str,
        layer: usize,
        step: usize,
    },

    #[error("registry file has bad magic bytes (not a registry file)")]
    BadMagic,

    #[error("registry format version {found} is not supported (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch in {context}")]
    ChecksumMismatch { context: String },

    #[error("registry file truncated while reading {context}")]
    Truncated { context: String },

    #[error("unknown stage index {0}")]
    UnknownStage(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("manifest parse error: {0}")]
    Manifest(String),

    #[error("{0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;
