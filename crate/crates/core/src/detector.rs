//! The appearance-detector interface and its deterministic implementations.
//!
//! Detectors see either the full frame or the ROI crop and report boxes in
//! the coordinates of the image they were given. Any resizing a model needs
//! is the adapter's business.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, DetectionMode};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectScope {
    Global,
    Local,
}

impl DetectScope {
    pub fn yolo_mode(self) -> DetectionMode {
        match self {
            DetectScope::Global => DetectionMode::GlobalYolo,
            DetectScope::Local => DetectionMode::LocalYolo,
        }
    }

    pub fn motion_mode(self) -> DetectionMode {
        match self {
            DetectScope::Global => DetectionMode::GlobalMotion,
            DetectScope::Local => DetectionMode::LocalMotion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectContext {
    pub frame_index: usize,
    pub scope: DetectScope,
    /// Top-left of the passed image inside the full frame.
    pub origin: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorOutput {
    pub detections: Vec<Detection>,
    pub latency_hint: Option<f64>,
}

pub trait Detector: Send {
    fn detect(&mut self, image: &Raster, ctx: &DetectContext) -> Result<DetectorOutput>;
}

/// Moves a full-frame box into the coordinates of the passed image, clipped
/// to its bounds.
fn to_image_coords(b: &BBox, image: &Raster, ctx: &DetectContext) -> Option<BBox> {
    b.translate(-(ctx.origin.0 as f64), -(ctx.origin.1 as f64))
        .clip_to(image.width() as f64, image.height() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Probability of missing the target on a frame.
    pub dropout: f64,
    pub score_base: f64,
    /// Scores are drawn uniformly from `score_base +- score_jitter`.
    pub score_jitter: f64,
    /// Uniform per-coordinate box perturbation, pixels.
    pub box_jitter: f64,
    pub class_id: i32,
    pub seed: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            dropout: 0.0,
            score_base: 0.8,
            score_jitter: 0.1,
            box_jitter: 0.0,
            class_id: 0,
            seed: 7,
        }
    }
}

/// Emits ground truth, with seeded misses and score noise.
#[derive(Debug, Clone)]
pub struct MockDetector {
    truth: Vec<Option<BBox>>,
    cfg: MockConfig,
}

impl MockDetector {
    pub fn new(truth: Vec<Option<BBox>>, cfg: MockConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1]", cfg.dropout)));
        }
        if cfg.score_jitter < 0.0 || cfg.box_jitter < 0.0 {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        Ok(Self { truth, cfg })
    }

    fn frame_rng(&self, frame: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// The full-frame emission for `frame`, independent of scope.
    pub fn emission(&self, frame: usize) -> Option<(BBox, f64)> {
        let truth = (*self.truth.get(frame)?)?;
        let mut rng = self.frame_rng(frame);
        let drop = rng.random::<f64>() < self.cfg.dropout;
        let u: f64 = rng.random_range(-1.0..=1.0);
        let mut j = [0.0; 4];
        for v in j.iter_mut() {
            *v = rng.random_range(-1.0..=1.0) * self.cfg.box_jitter;
        }
        if drop {
            return None;
        }
        let score = (self.cfg.score_base + u * self.cfg.score_jitter).clamp(0.0, 1.0);
        let b = BBox::new(
            truth.x() + j[0],
            truth.y() + j[1],
            (truth.w() + j[2]).max(1.0),
            (truth.h() + j[3]).max(1.0),
        )
        .ok()?;
        Some((b, score))
    }
}

impl Detector for MockDetector {
    fn detect(&mut self, image: &Raster, ctx: &DetectContext) -> Result<DetectorOutput> {
        let mut out = DetectorOutput::default();
        if let Some((b, score)) = self.emission(ctx.frame_index) {
            if let Some(b) = to_image_coords(&b, image, ctx) {
                out.detections.push(Detection::new(
                    b,
                    score,
                    self.cfg.class_id,
                    ctx.scope.yolo_mode(),
                )?);
            }
        }
        Ok(out)
    }
}

/// One row of a detections file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub frame: usize,
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i32,
}

/// Reads a header-less `frame,x,y,w,h,score,class_id` CSV.
pub fn read_detections_csv(path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 7 {
            return Err(perr(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| perr(format!("field {}: {e}", i + 1)))
        };
        let frame = rec[0]
            .parse::<usize>()
            .map_err(|e| perr(format!("frame index: {e}")))?;
        let bbox = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?).map_err(|e| perr(e.to_string()))?;
        let score = num(5)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(perr(format!("score {score} outside [0, 1]")));
        }
        let class_id = rec[6]
            .parse::<i32>()
            .map_err(|e| perr(format!("class id: {e}")))?;
        out.push(DetectionRecord {
            frame,
            bbox,
            score,
            class_id,
        });
    }
    Ok(out)
}

/// Replays detections recorded in full-frame coordinates.
#[derive(Debug, Clone, Default)]
pub struct FileDetector {
    by_frame: BTreeMap<usize, Vec<DetectionRecord>>,
}

impl FileDetector {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_records(read_detections_csv(path)?))
    }

    pub fn from_records(records: Vec<DetectionRecord>) -> Self {
        let mut by_frame: BTreeMap<usize, Vec<DetectionRecord>> = BTreeMap::new();
        for r in records {
            by_frame.entry(r.frame).or_default().push(r);
        }
        Self { by_frame }
    }
}

impl Detector for FileDetector {
    fn detect(&mut self, image: &Raster, ctx: &DetectContext) -> Result<DetectorOutput> {
        let mut out = DetectorOutput::default();
        for r in self.by_frame.get(&ctx.frame_index).into_iter().flatten() {
            if let Some(b) = to_image_coords(&r.bbox, image, ctx) {
                out.detections
                    .push(Detection::new(b, r.score, r.class_id, ctx.scope.yolo_mode())?);
            }
        }
        Ok(out)
    }
}
