//! Single-target tiny-object tracking by detection.
//!
//! An appearance detector is backed by a motion detector (optical-flow
//! alignment, frame differencing, template matching and Kalman
//! verification), and a controller switches between full-frame and
//! region-of-interest detection.

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod homography;
pub mod imgproc;
pub mod io;
pub mod kalman;
pub mod matching;
pub mod motion;
pub mod pipeline;
pub mod raster;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::{iou, BBox, Detection, DetectionMode};
pub use raster::{Frame, Plane, Raster};
