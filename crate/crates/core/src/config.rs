//! Pipeline thresholds and tuning knobs.
//!
//! Every field has a default, so a JSON override file only needs the keys it
//! changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Consecutive global detections before switching to local mode.
    pub n_g: usize,
    /// Consecutive local misses before reverting to global mode.
    pub n_l: usize,
    /// Appearance-detector confidence gate in global mode.
    pub tau_g: f64,
    /// Appearance-detector confidence gate in local mode.
    pub tau_l: f64,
    /// Fraction of the ROI half-side inside which the ROI is left in place.
    pub r_s: f64,
    /// Side of the motion-extraction crop, pixels.
    pub delta_p: usize,
    /// ROI growth per lost frame, pixels.
    pub k1: f64,
    /// Weight of visual similarity in the matching cost.
    pub k2: f64,
    /// Weight of displacement similarity in the matching cost.
    pub k3: f64,
    /// Base ROI side, pixels.
    pub roi_base: f64,
    /// Candidate rescaling factors for multi-scale similarity.
    pub scales: Vec<f64>,
    /// Matches with a weighted cost below this are discarded.
    pub min_match_cost: f64,
    pub flow: FlowConfig,
    pub ransac: RansacConfig,
    pub motion: MotionConfig,
    pub matching: MatchConfig,
    pub kalman: KalmanConfig,
    pub track: TrackConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_g: 30,
            n_l: 60,
            tau_g: 0.3,
            tau_l: 0.1,
            r_s: 4.0 / 5.0,
            delta_p: 50,
            k1: 1.0,
            k2: 0.6,
            k3: 0.4,
            roi_base: 300.0,
            scales: vec![0.7, 1.0, 1.3],
            min_match_cost: 0.5,
            flow: FlowConfig::default(),
            ransac: RansacConfig::default(),
            motion: MotionConfig::default(),
            matching: MatchConfig::default(),
            kalman: KalmanConfig::default(),
            track: TrackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub win: usize,
    pub max_iter: usize,
    pub eps: f64,
    /// Minimum eigenvalue of the window-averaged gradient matrix, intensities in [0, 1].
    pub min_eigen: f64,
    pub grid_step: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            win: 11,
            max_iter: 20,
            eps: 0.01,
            min_eigen: 1e-4,
            grid_step: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_tol: f64,
    pub seed: u64,
    /// Estimate alignment from a grid over the whole frame instead of the crop.
    pub full_frame: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_tol: 1.5,
            seed: 0x5EED,
            full_frame: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothingOrder {
    MedianThenGaussian,
    GaussianThenMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Lower bound on the Otsu threshold of the difference image.
    pub threshold_floor: u8,
    pub min_area: usize,
    pub max_candidates: usize,
    pub morph_ksize: usize,
    pub median_ksize: usize,
    pub blur_sigma: f64,
    pub blur_ksize: usize,
    /// Threshold applied after smoothing.
    pub final_threshold: u8,
    pub smoothing_order: SmoothingOrder,
    /// Equalize the mean of the aligned crop to the current crop before differencing.
    pub photometric_correction: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            threshold_floor: 15,
            min_area: 2,
            max_candidates: 8,
            morph_ksize: 3,
            median_ksize: 3,
            blur_sigma: 1.0,
            blur_ksize: 3,
            final_threshold: 127,
            smoothing_order: SmoothingOrder::MedianThenGaussian,
            photometric_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Half-width of the NCC search neighborhood around a candidate centroid.
    pub search_radius: i32,
    /// Context pixels kept around the target box when capturing a template.
    pub template_margin: f64,
    /// Below this per-frame displacement the heading is carried forward.
    pub stationary_eps: f64,
    /// Recapture the template from motion-path confirmations too, not only
    /// from detector boxes.
    pub refresh_on_motion: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            search_radius: 2,
            template_margin: 2.0,
            stationary_eps: 0.5,
            refresh_on_motion: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r: f64,
    pub p0_pos: f64,
    pub p0_vel: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            q_pos: 1.0,
            q_vel: 0.25,
            r: 4.0,
            p0_pos: 10.0,
            p0_vel: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    /// Updates a filter needs before its prediction can veto a template match.
    pub min_updates_to_verify: usize,
    /// A below-gate detector box may (re)seed the track once the last
    /// confirmation is older than this many frames.
    pub stale_after: usize,
    /// Consecutive prediction-only emissions allowed before reporting a miss.
    pub max_prediction_streak: usize,
    /// Allow below-gate detector boxes to seed the track (never emitted).
    pub seed_from_weak: bool,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            min_updates_to_verify: 3,
            stale_after: 5,
            max_prediction_streak: 5,
            seed_from_weak: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_g == 0 || self.n_l == 0 {
            return bad("n_g and n_l must be positive");
        }
        if !(self.r_s > 0.0 && self.r_s <= 1.0) {
            return bad("r_s must lie in (0, 1]");
        }
        if !(self.roi_base > 0.0) || self.k1 < 0.0 {
            return bad("roi_base must be positive and k1 non-negative");
        }
        if self.k2 < 0.0 || self.k3 < 0.0 {
            return bad("k2 and k3 must be non-negative");
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0)) {
            return bad("scales must be nonempty and positive");
        }
        if !(0.0..=1.0).contains(&self.tau_g) || !(0.0..=1.0).contains(&self.tau_l) {
            return bad("confidence gates must lie in [0, 1]");
        }
        if self.delta_p < 4 {
            return bad("delta_p must be at least 4 pixels");
        }
        let f = &self.flow;
        if f.levels == 0 || f.win < 3 || f.win % 2 == 0 || f.grid_step == 0 {
            return bad("flow: levels >= 1, odd win >= 3, grid_step >= 1");
        }
        let m = &self.motion;
        for k in [m.morph_ksize, m.median_ksize, m.blur_ksize] {
            if k == 0 || k % 2 == 0 {
                return bad("motion kernel sizes must be odd and positive");
            }
        }
        if !(m.blur_sigma > 0.0) {
            return bad("motion.blur_sigma must be positive");
        }
        if self.ransac.iterations == 0 || !(self.ransac.inlier_tol > 0.0) {
            return bad("ransac iterations and inlier_tol must be positive");
        }
        let k = &self.kalman;
        if [k.q_pos, k.q_vel, k.r, k.p0_pos, k.p0_vel]
            .iter()
            .any(|&v| !(v >= 0.0))
        {
            return bad("kalman variances must be non-negative");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
