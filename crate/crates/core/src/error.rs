use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inconsistent hierarchy for identity {0}")]
    InconsistentHierarchy(u64),

    #[error("empty manifest: {0}")]
    EmptyManifest(PathBuf),

    #[error("manifest {path} line {line}: {msg}")]
    ManifestRow { path: PathBuf, line: u64, msg: String },

    #[error("no inter-class contrast")]
    NoInterClassContrast,

    #[error("insufficient intra-class samples")]
    InsufficientIntraClass,

    #[error("neighbor of model {0} lies outside the seed's model class")]
    OutOfModelNeighbor(u64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("non-finite value in layer {layer}: {what}")]
    NonFinite { layer: usize, what: String },

    #[error("negative distance {0}")]
    NegativeDistance(f64),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("feature cache: {0}")]
    Cache(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
