use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid bounding box: x={x}, y={y}, w={w}, h={h}")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("transform error: {0}")]
    Transform(String),

    #[error("need at least 4 tracked correspondences, got {0}")]
    DegenerateCorrespondences(usize),

    #[error("homography estimation failed: {0} inliers")]
    EstimationFailed(usize),

    #[error("zero variance in correlation window")]
    ZeroVariance,

    #[error("track history unavailable")]
    HistoryUnavailable,

    #[error("kalman filter diverged: innovation covariance is singular")]
    FilterDiverged,

    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("frame {got} arrived after frame {last}")]
    Sequencing { last: usize, got: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("scene spec invalid: {0}")]
    Spec(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read image {}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
