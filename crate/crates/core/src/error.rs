use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer's shape or parameters do not fit the data flowing into it.
    #[error("{}", config_message(*.layer, .msg))]
    Config { layer: Option<usize>, msg: String },

    #[error("image too small: network needs at least {required}x{required} pixels, got {height}x{width}")]
    ImageTooSmall { required: usize, height: usize, width: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("bad magic: not a {expected} manifest")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("weight blob truncated at layer {layer}")]
    Truncated { layer: usize },

    #[error("weight blob has {extra} bytes beyond the manifest's last span")]
    TrailingBytes { extra: u64 },

    #[error("{source_name}:{line}: {msg}")]
    Parse { source_name: String, line: usize, msg: String },

    #[error("image decode: {0}")]
    Decode(String),

    #[error("sampling exhausted: no qualifying window after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("ridge system is singular or ill-conditioned; use lambda > 0")]
    IllConditioned,

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn config_message(layer: Option<usize>, msg: &str) -> String {
    match layer {
        Some(i) => format!("configuration error at layer {i}: {msg}"),
        None => format!("configuration error: {msg}"),
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config { layer: None, msg: msg.into() }
    }

    pub(crate) fn at_layer(self, index: usize) -> Self {
        match self {
            Error::Config { layer: None, msg } => Error::Config { layer: Some(index), msg },
            other => other,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { source_name: source_name.to_string(), line, msg: msg.into() }
    }

    /// Short stable identifier for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numeric(_) => "numeric",
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing-bytes",
            Error::Parse { .. } => "parse",
            Error::Decode(_) => "decode",
            Error::SamplingExhausted { .. } => "sampling-exhausted",
            Error::IllConditioned => "ill-conditioned",
            Error::Io(_) => "io",
        }
    }
}
