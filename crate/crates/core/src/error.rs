use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("box ({x_min},{y_min},{x_max},{y_max}) lies outside the {width}x{height} image")]
    BoxOutsideImage {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
        width: u32,
        height: u32,
    },

    #[error("scene `{scene_id}` has more than one {view} view")]
    DuplicateView { scene_id: String, view: String },

    #[error("duplicate record for ({0}, {1})")]
    DuplicateKey(String, String),

    #[error("unknown shape class `{0}` (expected ellipsoid, column or irregular)")]
    UnknownShape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("no calibration object detected")]
    MissingCalibration,

    #[error("no parameters for food `{0}`")]
    MissingParams(String),

    #[error("no density for food `{0}`")]
    MissingDensity(String),

    #[error("no energy density for food `{0}`")]
    MissingEnergy(String),

    #[error("segmentation is degenerate: {0}")]
    DegenerateSegmentation(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("degenerate fit for `{food}`: {reason}")]
    DegenerateFit { food: String, reason: String },

    #[error("records mix food types `{0}` and `{1}`")]
    MixedFoods(String, String),

    #[error("invalid flow graph: {0}")]
    InvalidGraph(String),

    #[error("synthetic scene: {0}")]
    Synth(String),

    #[error("nothing to evaluate: {0}")]
    EmptyJoin(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
