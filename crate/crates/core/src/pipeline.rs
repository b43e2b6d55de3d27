//! The combined detector (appearance detector with motion fallback) and the
//! global/local controller that decides where the detector looks.

use std::collections::VecDeque;

use crate::config::PipelineConfig;
use crate::detector::{DetectContext, DetectScope, Detector};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::kalman::{verify_match, KalmanState, Verification};
use crate::matching::{match_candidates, TrackHistory};
use crate::motion::{extract_candidates, extract_candidates_debug, MotionDebug};
use crate::raster::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Global,
    Local,
}

impl Mode {
    pub fn scope(self) -> DetectScope {
        match self {
            Mode::Global => DetectScope::Global,
            Mode::Local => DetectScope::Local,
        }
    }
}

/// How the motion path resolved on a frame, for logging and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionOutcome {
    NotRun,
    Unavailable,
    NoMatch,
    Confirmed,
    Predicted,
}

/// Integer-aligned square crop of side `side` centred on `center`, shifted
/// inside the frame. Sides larger than the frame are clamped to it.
pub fn roi_rect(center: (f64, f64), side: f64, dims: (usize, usize)) -> BBox {
    let s = side.round().max(1.0);
    let (fw, fh) = (dims.0 as f64, dims.1 as f64);
    let sw = s.min(fw);
    let sh = s.min(fh);
    let x0 = (center.0 - sw / 2.0).round().clamp(0.0, fw - sw);
    let y0 = (center.1 - sh / 2.0).round().clamp(0.0, fh - sh);
    BBox::new(x0, y0, sw, sh).expect("positive roi")
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub mode: Mode,
    pub n_g_count: usize,
    pub n_l_count: usize,
    pub f_lost: usize,
    /// Side the ROI should have before clamping to the frame.
    pub roi_side: f64,
    pub roi: Option<BBox>,
    /// Where the first local crop will be centred, recorded while global.
    pub seed_center: Option<(f64, f64)>,
    pub history: TrackHistory,
    pub kf: Option<KalmanState>,
    /// Frame index the filter state refers to.
    pub kf_frame: usize,
    /// Previous frames, oldest first (at most two).
    pub frames: VecDeque<Frame>,
    /// Recent emitted boxes with their frame indices.
    pub track: VecDeque<(usize, BBox)>,
    pub prediction_streak: usize,
    pub last_confirmed: Option<usize>,
    pub class_id: i32,
    pub last_index: Option<usize>,
}

impl ControllerState {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            mode: Mode::Global,
            n_g_count: 0,
            n_l_count: 0,
            f_lost: 0,
            roi_side: cfg.roi_base,
            roi: None,
            seed_center: None,
            history: TrackHistory::default(),
            kf: None,
            kf_frame: 0,
            frames: VecDeque::with_capacity(3),
            track: VecDeque::with_capacity(3),
            prediction_streak: 0,
            last_confirmed: None,
            class_id: 0,
            last_index: None,
        }
    }

    /// Moves or resizes the ROI after a local hit (`Some`) or miss (`None`).
    pub fn roi_update(&mut self, det: Option<&BBox>, dims: (usize, usize), cfg: &PipelineConfig) {
        let Some(roi) = self.roi else {
            return;
        };
        let center = roi.center();
        match det {
            Some(b) => {
                let (tx, ty) = b.center();
                let cheb = (tx - center.0).abs().max((ty - center.1).abs());
                let keep = cheb <= cfg.r_s * self.roi_side / 2.0;
                self.f_lost = 0;
                self.roi_side = cfg.roi_base;
                let c = if keep { center } else { (tx, ty) };
                self.roi = Some(roi_rect(c, self.roi_side, dims));
            }
            None => {
                self.f_lost += 1;
                self.roi_side = cfg.roi_base + cfg.k1 * self.f_lost as f64;
                self.roi = Some(roi_rect(center, self.roi_side, dims));
            }
        }
    }

    fn clear_roi(&mut self, cfg: &PipelineConfig) {
        self.roi = None;
        self.roi_side = cfg.roi_base;
        self.f_lost = 0;
    }

    /// Filter advanced to frame `t`, without touching the stored state.
    fn kf_prior(&self, t: usize) -> Option<KalmanState> {
        let mut kf = self.kf.clone()?;
        for _ in self.kf_frame..t {
            kf = kf.predict();
        }
        Some(kf)
    }

    fn confirm(&mut self, frame: &Frame, b: &BBox, cfg: &PipelineConfig, from_detector: bool) {
        let refresh = from_detector || cfg.matching.refresh_on_motion;
        self.history.confirm(frame, b, &cfg.matching, refresh);
        let updated = self
            .kf_prior(frame.index)
            .map(|prior| prior.update(b))
            .transpose();
        self.kf = match updated {
            Ok(Some(kf)) => Some(kf),
            Ok(None) => Some(KalmanState::init(b, &cfg.kalman)),
            Err(e) => {
                log::warn!("frame {}: {e}; reinitializing filter", frame.index);
                Some(KalmanState::init(b, &cfg.kalman))
            }
        };
        self.kf_frame = frame.index;
        self.last_confirmed = Some(frame.index);
        self.prediction_streak = 0;
    }

    fn reseed(&mut self, frame: &Frame, b: &BBox, cfg: &PipelineConfig) {
        self.history.reset();
        self.kf = None;
        self.track.clear();
        self.confirm(frame, b, cfg, true);
        self.track.push_back((frame.index, *b));
    }

    fn push_track(&mut self, t: usize, b: BBox) {
        self.track.push_back((t, b));
        while self.track.len() > 3 {
            self.track.pop_front();
        }
    }

    /// Box the motion window is centred on: the target at `F_{t-2}` when
    /// known, else the most recent known box.
    fn anchor(&self, t: usize) -> Option<BBox> {
        self.track
            .iter()
            .rev()
            .find(|(i, _)| i + 2 <= t)
            .or(self.track.back())
            .map(|&(_, b)| b)
    }
}

/// Result of one pipeline step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub frame_index: usize,
    pub detection: Option<Detection>,
    /// Mode the frame was processed in.
    pub mode: Mode,
    /// ROI used for the frame, in frame coordinates.
    pub roi: Option<BBox>,
    pub motion: MotionOutcome,
    pub debug: Option<MotionDebug>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    state: ControllerState,
    capture_debug: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let state = ControllerState::new(&cfg);
        Ok(Self {
            cfg,
            state,
            capture_debug: false,
        })
    }

    /// Keep intermediate motion-extraction images in each [`StepOutput`].
    pub fn with_debug(mut self, on: bool) -> Self {
        self.capture_debug = on;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Processes the next frame. Frame indices must strictly increase.
    pub fn step(&mut self, frame: Frame, detector: &mut dyn Detector) -> Result<StepOutput> {
        if let Some(last) = self.state.last_index {
            if frame.index <= last {
                return Err(Error::Sequencing {
                    last,
                    got: frame.index,
                });
            }
        }
        if let Some(prev) = self.state.frames.back() {
            if prev.gray.dims() != frame.gray.dims() {
                return Err(Error::Input(format!(
                    "frame {} is {:?}, expected {:?}",
                    frame.index,
                    frame.gray.dims(),
                    prev.gray.dims()
                )));
            }
        }
        let mode = self.state.mode;
        let roi = self.state.roi;
        let (detection, motion, debug) = self.yomo(&frame, detector)?;
        self.gl_update(detection.as_ref(), frame.gray.dims());

        let st = &mut self.state;
        st.last_index = Some(frame.index);
        st.frames.push_back(frame.clone());
        while st.frames.len() > 2 {
            st.frames.pop_front();
        }
        Ok(StepOutput {
            frame_index: frame.index,
            detection,
            mode,
            roi,
            motion,
            debug,
        })
    }

    /// Counter and mode bookkeeping after a frame's detection result.
    fn gl_update(&mut self, det: Option<&Detection>, dims: (usize, usize)) {
        let cfg = &self.cfg;
        let st = &mut self.state;
        match (st.mode, det) {
            (Mode::Global, Some(d)) => {
                st.n_g_count = (st.n_g_count + 1).min(cfg.n_g);
                st.n_l_count = 0;
                st.seed_center = Some(d.bbox.center());
                if st.n_g_count >= cfg.n_g {
                    st.mode = Mode::Local;
                    st.f_lost = 0;
                    st.roi_side = cfg.roi_base;
                    st.roi = Some(roi_rect(d.bbox.center(), cfg.roi_base, dims));
                }
            }
            (Mode::Global, None) => {
                st.n_g_count = 0;
            }
            (Mode::Local, Some(d)) => {
                st.n_l_count = 0;
                st.roi_update(Some(&d.bbox), dims, cfg);
            }
            (Mode::Local, None) => {
                st.n_l_count = (st.n_l_count + 1).min(cfg.n_l);
                st.roi_update(None, dims, cfg);
                if st.n_l_count >= cfg.n_l {
                    st.mode = Mode::Global;
                    st.n_g_count = 0;
                    st.n_l_count = 0;
                    st.seed_center = None;
                    st.clear_roi(cfg);
                }
            }
        }
    }

    fn yomo(
        &mut self,
        frame: &Frame,
        detector: &mut dyn Detector,
    ) -> Result<(Option<Detection>, MotionOutcome, Option<MotionDebug>)> {
        let t = frame.index;
        let dims = frame.gray.dims();
        let mode = self.state.mode;
        let scope = mode.scope();
        let (origin, crop) = match (mode, self.state.roi) {
            (Mode::Local, Some(r)) => {
                let (x0, y0) = (r.x() as usize, r.y() as usize);
                let crop = frame.gray.crop(x0, y0, r.w() as usize, r.h() as usize)?;
                ((x0, y0), Some(crop))
            }
            _ => ((0, 0), None),
        };
        let image = crop.as_ref().unwrap_or(&frame.gray);
        let ctx = DetectContext {
            frame_index: t,
            scope,
            origin,
        };
        let boxes = match detector.detect(image, &ctx) {
            Ok(out) => out.detections,
            Err(e) => {
                log::warn!("frame {t}: detector failed ({e}); treating as no boxes");
                Vec::new()
            }
        };
        let best = boxes
            .into_iter()
            .max_by(|a, b| a.score().total_cmp(&b.score()))
            .and_then(|d| {
                let b = d
                    .bbox
                    .translate(origin.0 as f64, origin.1 as f64)
                    .clip_to(dims.0 as f64, dims.1 as f64)?;
                Detection::new(b, d.score(), d.class_id, scope.yolo_mode()).ok()
            });
        let tau = match mode {
            Mode::Global => self.cfg.tau_g,
            Mode::Local => self.cfg.tau_l,
        };

        if let Some(d) = best.as_ref().filter(|d| d.score() > tau) {
            let cfg = self.cfg.clone();
            self.state.class_id = d.class_id;
            self.state.confirm(frame, &d.bbox, &cfg, true);
            self.state.push_track(t, d.bbox);
            return Ok((Some(d.clone()), MotionOutcome::NotRun, None));
        }

        let search_dims = match (mode, self.state.roi) {
            (Mode::Local, Some(r)) => (r.w() as usize, r.h() as usize),
            _ => dims,
        };
        let (det, outcome, debug) = self.motion_path(frame, search_dims)?;
        if det.is_some() {
            return Ok((det, outcome, debug));
        }

        if let Some(weak) = best.filter(|_| self.cfg.track.seed_from_weak) {
            let stale = self
                .state
                .last_confirmed
                .is_none_or(|c| t.saturating_sub(c) > self.cfg.track.stale_after);
            if self.state.history.template.is_none() || stale {
                log::debug!("frame {t}: seeding track from below-gate box");
                let cfg = self.cfg.clone();
                self.state.class_id = weak.class_id;
                self.state.reseed(frame, &weak.bbox, &cfg);
            }
        }
        Ok((None, outcome, debug))
    }

    fn motion_path(
        &mut self,
        frame: &Frame,
        search_dims: (usize, usize),
    ) -> Result<(Option<Detection>, MotionOutcome, Option<MotionDebug>)> {
        let t = frame.index;
        let dims = frame.gray.dims();
        let st = &self.state;
        let ready = st.history.template.is_some() && st.kf.is_some() && st.frames.len() == 2;
        let Some(anchor) = st.anchor(t).filter(|_| ready) else {
            return Ok((None, MotionOutcome::Unavailable, None));
        };
        let f_prev2 = &st.frames[0];
        let (cands, debug) = if self.capture_debug {
            let (c, d) = extract_candidates_debug(f_prev2, frame, &anchor, &self.cfg)?;
            (c, Some(d))
        } else {
            (extract_candidates(f_prev2, frame, &anchor, &self.cfg)?, None)
        };
        let prior = st.kf_prior(t).expect("filter present");
        let Some(m) = match_candidates(&st.history, &cands, frame, search_dims, &self.cfg) else {
            return Ok((None, MotionOutcome::NoMatch, debug));
        };

        let mature = prior.updates >= self.cfg.track.min_updates_to_verify;
        let verdict = if mature {
            verify_match(&prior, &m.bbox)
        } else {
            Verification::ConfirmMatch
        };
        let (bbox, outcome) = match verdict {
            Verification::ConfirmMatch => (m.bbox, MotionOutcome::Confirmed),
            Verification::UsePrediction => {
                if st.prediction_streak >= self.cfg.track.max_prediction_streak {
                    return Ok((None, MotionOutcome::NoMatch, debug));
                }
                (prior.bbox(), MotionOutcome::Predicted)
            }
        };
        let limit = match (st.mode, st.roi) {
            (Mode::Local, Some(r)) => r,
            _ => BBox::new(0.0, 0.0, dims.0 as f64, dims.1 as f64)?,
        };
        let Some(bbox) = bbox.intersect(&limit) else {
            return Ok((None, MotionOutcome::NoMatch, debug));
        };
        let det = Detection::new(
            bbox,
            m.score.c_w.clamp(0.0, 1.0),
            st.class_id,
            st.mode.scope().motion_mode(),
        )?;

        let cfg = self.cfg.clone();
        let st = &mut self.state;
        match outcome {
            MotionOutcome::Confirmed => st.confirm(frame, &bbox, &cfg, false),
            _ => {
                st.kf = Some(prior);
                st.kf_frame = t;
                st.prediction_streak += 1;
            }
        }
        st.push_track(t, bbox);
        Ok((Some(det), outcome, debug))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectorOutput, MockConfig, MockDetector};
    use crate::geometry::DetectionMode;
    use crate::raster::Raster;

    /// Emits a fixed-score box at a fixed full-frame position on scripted frames.
    struct Scripted {
        hits: Vec<bool>,
        score: f64,
        at: BBox,
    }

    impl Detector for Scripted {
        fn detect(&mut self, image: &Raster, ctx: &DetectContext) -> Result<DetectorOutput> {
            let mut out = DetectorOutput::default();
            if self.hits.get(ctx.frame_index).copied().unwrap_or(false) {
                let b = self
                    .at
                    .translate(-(ctx.origin.0 as f64), -(ctx.origin.1 as f64))
                    .clip_to(image.width() as f64, image.height() as f64);
                if let Some(b) = b {
                    out.detections
                        .push(Detection::new(b, self.score, 0, ctx.scope.yolo_mode())?);
                }
            }
            Ok(out)
        }
    }

    fn blank(t: usize) -> Frame {
        Frame::new(t, Raster::new(640, 480, 100))
    }

    fn run(hits: Vec<bool>) -> (Pipeline, Vec<StepOutput>) {
        let n = hits.len();
        let mut det = Scripted {
            hits,
            score: 0.9,
            at: BBox::new(300.0, 200.0, 4.0, 3.0).unwrap(),
        };
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let outs = (0..n).map(|t| p.step(blank(t), &mut det).unwrap()).collect();
        (p, outs)
    }

    #[test]
    fn roi_side_law() {
        let cfg = PipelineConfig::default();
        let mut st = ControllerState::new(&cfg);
        st.roi = Some(roi_rect((320.0, 240.0), 300.0, (1280, 720)));
        assert_eq!(st.roi.unwrap().w(), 300.0);
        for _ in 0..20 {
            st.roi_update(None, (1280, 720), &cfg);
        }
        assert_eq!(st.roi.unwrap().w(), 320.0);
        let c = st.roi.unwrap().center();
        let hit = BBox::from_center(c.0, c.1, 4.0, 3.0).unwrap();
        st.roi_update(Some(&hit), (1280, 720), &cfg);
        assert_eq!(st.f_lost, 0);
        assert_eq!(st.roi.unwrap().w(), 300.0);
        assert_eq!(st.roi.unwrap().center(), c);
    }

    #[test]
    fn roi_recentres_outside_band() {
        let cfg = PipelineConfig::default();
        let mut st = ControllerState::new(&cfg);
        st.roi = Some(roi_rect((400.0, 300.0), 300.0, (1280, 720)));
        let far = BBox::from_center(530.0, 300.0, 4.0, 3.0).unwrap();
        st.roi_update(Some(&far), (1280, 720), &cfg);
        assert_eq!(st.roi.unwrap().center(), (530.0, 300.0));
        let near = BBox::from_center(580.0, 300.0, 4.0, 3.0).unwrap();
        st.roi_update(Some(&near), (1280, 720), &cfg);
        assert_eq!(st.roi.unwrap().center(), (530.0, 300.0));
    }

    #[test]
    fn roi_shifted_inside_frame() {
        let r = roi_rect((10.0, 700.0), 300.0, (1280, 720));
        assert_eq!((r.x(), r.y(), r.w(), r.h()), (0.0, 420.0, 300.0, 300.0));
        let big = roi_rect((100.0, 100.0), 900.0, (1280, 720));
        assert_eq!((big.w(), big.h(), big.y()), (900.0, 720.0, 0.0));
    }

    #[test]
    fn switches_on_thirtieth_hit() {
        let (_, outs) = run(vec![true; 31]);
        assert!(outs[..30].iter().all(|o| o.mode == Mode::Global));
        assert_eq!(outs[30].mode, Mode::Local);
        assert!(outs.iter().all(|o| o.detection.is_some()));
        assert_eq!(outs[30].detection.as_ref().unwrap().mode, DetectionMode::LocalYolo);
    }

    #[test]
    fn reverts_on_sixtieth_miss() {
        let mut hits = vec![true; 30];
        hits.extend(vec![false; 60]);
        let (p, outs) = run(hits);
        assert_eq!(outs[89].mode, Mode::Local);
        assert_eq!(outs[89].roi.unwrap().w(), 300.0 + 59.0);
        let st = p.state();
        assert_eq!(st.mode, Mode::Global);
        assert!(st.roi.is_none());
        assert_eq!((st.n_g_count, st.n_l_count), (0, 0));
    }

    #[test]
    fn alternating_never_switches() {
        let hits = (0..120).map(|t| t % 2 == 0).collect();
        let (p, outs) = run(hits);
        assert!(outs.iter().all(|o| o.mode == Mode::Global));
        assert!(p.state().n_g_count <= 1);
    }

    #[test]
    fn cold_start_emits_nothing() {
        let (_, outs) = run(vec![false; 5]);
        assert!(outs.iter().all(|o| o.detection.is_none()));
        assert!(outs.iter().all(|o| o.motion == MotionOutcome::Unavailable));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let mut det = MockDetector::new(vec![], MockConfig::default()).unwrap();
        p.step(blank(3), &mut det).unwrap();
        assert!(matches!(
            p.step(blank(3), &mut det),
            Err(Error::Sequencing { last: 3, got: 3 })
        ));
    }

    #[test]
    fn local_emissions_inside_roi() {
        let mut hits = vec![true; 40];
        hits.extend(vec![false; 5]);
        let (_, outs) = run(hits);
        for o in outs.iter().filter(|o| o.mode == Mode::Local) {
            if let (Some(d), Some(r)) = (&o.detection, o.roi) {
                assert!(r.contains_box(&d.bbox, 1e-9));
            }
        }
    }
}
