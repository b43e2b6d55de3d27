//! Template matching of motion candidates: multi-scale normalized
//! cross-correlation, three-frame displacement consistency, and the weighted
//! cost that picks the winner.

use std::collections::VecDeque;
use std::f64::consts::PI;

use crate::config::{MatchConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::motion::MotionCandidate;
use crate::raster::{Frame, Raster};

/// Zero-mean normalized cross-correlation of `template` against the window of
/// `image` whose top-left corner is `(x, y)`.
pub fn ncc(template: &Raster, image: &Raster, x: usize, y: usize) -> Result<f64> {
    let (tw, th) = template.dims();
    if x + tw > image.width() || y + th > image.height() {
        return Err(Error::Param(format!(
            "{tw}x{th} template does not fit at ({x},{y}) in {:?}",
            image.dims()
        )));
    }
    let n = (tw * th) as i128;
    let (mut st, mut stt, mut si, mut sii, mut sti) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for v in 0..th {
        for u in 0..tw {
            let t = template.get(u, v) as i128;
            let i = image.get(x + u, y + v) as i128;
            st += t;
            stt += t * t;
            si += i;
            sii += i * i;
            sti += t * i;
        }
    }
    let var_t = n * stt - st * st;
    let var_i = n * sii - si * si;
    if var_t == 0 || var_i == 0 {
        return Err(Error::ZeroVariance);
    }
    Ok((n * sti - st * si) as f64 / ((var_t as f64) * (var_i as f64)).sqrt())
}

/// NCC at every placement of `template` inside `image`, row-major over the
/// `(W - w + 1) x (H - h + 1)` placements. Window statistics come from
/// integral images; `None` marks zero-variance windows.
pub fn ncc_map(template: &Raster, image: &Raster) -> Result<Vec<Option<f64>>> {
    let (tw, th) = template.dims();
    let (iw, ih) = image.dims();
    if tw == 0 || th == 0 || tw > iw || th > ih {
        return Err(Error::Param("template must be nonempty and fit the image".into()));
    }
    let n = (tw * th) as i64;
    let st: i64 = template.data().iter().map(|&v| v as i64).sum();
    let stt: i64 = template.data().iter().map(|&v| (v as i64) * (v as i64)).sum();
    let var_t = n * stt - st * st;
    if var_t == 0 {
        return Err(Error::ZeroVariance);
    }
    // integral images with a zero first row/column
    let stride = iw + 1;
    let mut s1 = vec![0i64; stride * (ih + 1)];
    let mut s2 = vec![0i64; stride * (ih + 1)];
    for y in 0..ih {
        let (mut r1, mut r2) = (0i64, 0i64);
        for x in 0..iw {
            let v = image.get(x, y) as i64;
            r1 += v;
            r2 += v * v;
            s1[(y + 1) * stride + x + 1] = s1[y * stride + x + 1] + r1;
            s2[(y + 1) * stride + x + 1] = s2[y * stride + x + 1] + r2;
        }
    }
    let rect = |s: &[i64], x: usize, y: usize| {
        s[(y + th) * stride + x + tw] - s[y * stride + x + tw] - s[(y + th) * stride + x]
            + s[y * stride + x]
    };
    let (ow, oh) = (iw - tw + 1, ih - th + 1);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let si = rect(&s1, x, y);
            let var_i = n * rect(&s2, x, y) - si * si;
            if var_i == 0 {
                out.push(None);
                continue;
            }
            let mut sti = 0i64;
            for v in 0..th {
                let trow = &template.data()[v * tw..(v + 1) * tw];
                let irow = &image.data()[(y + v) * iw + x..(y + v) * iw + x + tw];
                sti += trow
                    .iter()
                    .zip(irow)
                    .map(|(&a, &b)| a as i64 * b as i64)
                    .sum::<i64>();
            }
            out.push(Some(
                (n * sti - st * si) as f64 / ((var_t as f64) * (var_i as f64)).sqrt(),
            ));
        }
    }
    Ok(out)
}

/// NCC of two equally sized sample vectors; `None` if either is flat.
pub fn ncc_slices(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    // flat up to rounding noise of an 8-bit image
    if da < 1e-9 * n || db < 1e-9 * n {
        return None;
    }
    Some((num / (da * db).sqrt()).clamp(-1.0, 1.0))
}

/// Maps a correlation coefficient from [-1, 1] onto [0, 1].
pub fn ncc_normalized(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

/// Appearance of the last confirmed target, with some surrounding context.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub patch: Raster,
    /// Size of the target box the template was captured from.
    pub box_w: f64,
    pub box_h: f64,
    /// Position of the first patch pixel's center relative to the box center.
    origin: (f64, f64),
}

impl Template {
    /// Captures the box plus `margin` pixels of context, clamped to the frame.
    pub fn capture(gray: &Raster, bbox: &BBox, margin: f64) -> Option<Self> {
        let (fw, fh) = (gray.width() as f64, gray.height() as f64);
        let x0 = (bbox.x() - margin).floor().clamp(0.0, fw - 1.0);
        let y0 = (bbox.y() - margin).floor().clamp(0.0, fh - 1.0);
        let x1 = (bbox.right() + margin).ceil().clamp(x0 + 1.0, fw);
        let y1 = (bbox.bottom() + margin).ceil().clamp(y0 + 1.0, fh);
        let patch = gray
            .crop(x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize)
            .ok()?;
        let (cx, cy) = bbox.center();
        Some(Self {
            patch,
            box_w: bbox.w(),
            box_h: bbox.h(),
            origin: (x0 + 0.5 - cx, y0 + 0.5 - cy),
        })
    }

    /// Resamples the frame around `center` with the template's footprint
    /// scaled by `scale`.
    fn sample(&self, gray: &Raster, center: (f64, f64), scale: f64, out: &mut Vec<f64>) {
        out.clear();
        let (tw, th) = self.patch.dims();
        for v in 0..th {
            for u in 0..tw {
                let px = center.0 + scale * (self.origin.0 + u as f64);
                let py = center.1 + scale * (self.origin.1 + v as f64);
                out.push(gray.sample_clamped(px - 0.5, py - 0.5));
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        self.patch.data().iter().map(|&v| v as f64).collect()
    }
}

/// What the matcher remembers about the target between frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackHistory {
    /// Up to two most recent confirmed centers with their frame indices.
    pub centers: VecDeque<(usize, (f64, f64))>,
    pub template: Option<Template>,
    /// Per-frame displacement of the last confirmed step.
    pub last_d: Option<f64>,
    /// Heading of the last confirmed step, radians.
    pub last_theta: Option<f64>,
}

impl TrackHistory {
    pub fn last_center(&self) -> Option<(usize, (f64, f64))> {
        self.centers.back().copied()
    }

    /// Records a confirmed detection, refreshing the template when asked to
    /// (or when there is none yet).
    pub fn confirm(&mut self, frame: &Frame, bbox: &BBox, cfg: &MatchConfig, refresh_template: bool) {
        let c = bbox.center();
        if let Some((idx, last)) = self.last_center() {
            let gap = frame.index.saturating_sub(idx).max(1) as f64;
            let (dx, dy) = ((c.0 - last.0) / gap, (c.1 - last.1) / gap);
            let d = dx.hypot(dy);
            let theta = if d >= cfg.stationary_eps {
                dy.atan2(dx)
            } else {
                self.last_theta.unwrap_or(0.0)
            };
            self.last_d = Some(d);
            self.last_theta = Some(theta);
        }
        self.centers.push_back((frame.index, c));
        while self.centers.len() > 2 {
            self.centers.pop_front();
        }
        if refresh_template || self.template.is_none() {
            if let Some(t) = Template::capture(&frame.gray, bbox, cfg.template_margin) {
                self.template = Some(t);
            }
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualSimilarity {
    pub c_c: f64,
    pub best_scale: f64,
    /// Center of the best-correlating placement.
    pub center: (f64, f64),
}

/// Best normalized NCC over the scale set and a small search neighborhood
/// around the candidate centroid.
pub fn multi_scale_similarity(
    hist: &TrackHistory,
    cand: &MotionCandidate,
    gray: &Raster,
    scales: &[f64],
    search_radius: i32,
) -> Result<VisualSimilarity> {
    let tpl = hist.template.as_ref().ok_or(Error::HistoryUnavailable)?;
    let default_scale = scales
        .iter()
        .copied()
        .min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
        .ok_or_else(|| Error::Param("empty scale set".into()))?;
    let mut best = VisualSimilarity {
        c_c: 0.0,
        best_scale: default_scale,
        center: cand.centroid,
    };
    let tvals = tpl.values();
    let mut buf = Vec::with_capacity(tvals.len());
    let mut found = false;
    for &s in scales {
        if tpl.box_w * s < 1.0 || tpl.box_h * s < 1.0 {
            continue;
        }
        for dy in -search_radius..=search_radius {
            for dx in -search_radius..=search_radius {
                let c = (cand.centroid.0 + dx as f64, cand.centroid.1 + dy as f64);
                tpl.sample(gray, c, s, &mut buf);
                let Some(v) = ncc_slices(&tvals, &buf) else {
                    continue;
                };
                let nc = ncc_normalized(v);
                if !found || nc > best.c_c {
                    found = true;
                    best = VisualSimilarity {
                        c_c: nc,
                        best_scale: s,
                        center: c,
                    };
                }
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementSimilarity {
    pub c_d: f64,
    pub dd_norm: f64,
    pub dtheta_norm: f64,
}

/// Absolute heading change folded into `[0, pi]`.
pub fn wrap_angle(delta: f64) -> f64 {
    let d = delta.abs() % (2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// Consistency of the candidate's step with the previous confirmed step.
/// `search_dims` is the size of the image being searched.
pub fn displacement_similarity(
    hist: &TrackHistory,
    cand_center: (f64, f64),
    frame_index: usize,
    search_dims: (usize, usize),
    cfg: &MatchConfig,
) -> Result<DisplacementSimilarity> {
    let (Some(last_d), Some(last_theta), Some((idx, last))) =
        (hist.last_d, hist.last_theta, hist.last_center())
    else {
        return Err(Error::HistoryUnavailable);
    };
    let gap = frame_index.saturating_sub(idx).max(1) as f64;
    let dx = (cand_center.0 - last.0) / gap;
    let dy = (cand_center.1 - last.1) / gap;
    let d = dx.hypot(dy);
    let diag = (search_dims.0 as f64).hypot(search_dims.1 as f64);
    let dd_norm = ((d - last_d).abs() / diag).min(1.0);
    let dtheta_norm = if d < cfg.stationary_eps {
        0.0
    } else {
        wrap_angle(dy.atan2(dx) - last_theta) / PI
    };
    let c_d = (1.0 - (dd_norm + dtheta_norm) / 2.0).clamp(0.0, 1.0);
    Ok(DisplacementSimilarity {
        c_d,
        dd_norm,
        dtheta_norm,
    })
}

pub fn weighted_cost(c_c: f64, c_d: f64, k2: f64, k3: f64) -> f64 {
    k2 * c_c + k3 * c_d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub c_c: f64,
    pub c_d: f64,
    pub c_w: f64,
    pub dd_norm: f64,
    pub dtheta_norm: f64,
    pub best_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub candidate: MotionCandidate,
    pub score: MatchScore,
    /// Template-sized box at the best-correlating placement.
    pub bbox: BBox,
}

/// Scores one candidate. Missing displacement history scores `c_d` as a
/// neutral 0.5.
pub fn score_candidate(
    hist: &TrackHistory,
    cand: &MotionCandidate,
    frame: &Frame,
    search_dims: (usize, usize),
    cfg: &PipelineConfig,
) -> Result<(MatchScore, VisualSimilarity)> {
    let vis = multi_scale_similarity(
        hist,
        cand,
        &frame.gray,
        &cfg.scales,
        cfg.matching.search_radius,
    )?;
    let disp = displacement_similarity(hist, vis.center, frame.index, search_dims, &cfg.matching)
        .unwrap_or(DisplacementSimilarity {
            c_d: 0.5,
            dd_norm: 0.0,
            dtheta_norm: 0.0,
        });
    let score = MatchScore {
        c_c: vis.c_c,
        c_d: disp.c_d,
        c_w: weighted_cost(vis.c_c, disp.c_d, cfg.k2, cfg.k3),
        dd_norm: disp.dd_norm,
        dtheta_norm: disp.dtheta_norm,
        best_scale: vis.best_scale,
    };
    Ok((score, vis))
}

/// Ranking used to pick the winning candidate: higher cost, then higher
/// visual similarity, then closer to the last center, then position.
pub fn rank_key(score: &MatchScore, center: (f64, f64), hist: &TrackHistory) -> [f64; 5] {
    let dist = hist
        .last_center()
        .map(|(_, c)| (center.0 - c.0).hypot(center.1 - c.1))
        .unwrap_or(0.0);
    [-score.c_w, -score.c_c, dist, center.0, center.1]
}

fn key_cmp(a: &[f64; 5], b: &[f64; 5]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Best-scoring candidate by weighted cost, or `None` when there are no
/// candidates or the best cost is below `cfg.min_match_cost`.
pub fn match_candidates(
    hist: &TrackHistory,
    cands: &[MotionCandidate],
    frame: &Frame,
    search_dims: (usize, usize),
    cfg: &PipelineConfig,
) -> Option<Match> {
    let tpl = hist.template.as_ref()?;
    let mut best: Option<([f64; 5], Match)> = None;
    for cand in cands {
        let Ok((score, vis)) = score_candidate(hist, cand, frame, search_dims, cfg) else {
            continue;
        };
        let key = rank_key(&score, vis.center, hist);
        if best
            .as_ref()
            .is_some_and(|(k, _)| key_cmp(&key, k).is_ge())
        {
            continue;
        }
        let w = tpl.box_w * score.best_scale;
        let h = tpl.box_h * score.best_scale;
        let Ok(bbox) = BBox::from_center(vis.center.0, vis.center.1, w, h) else {
            continue;
        };
        best = Some((
            key,
            Match {
                candidate: cand.clone(),
                score,
                bbox,
            },
        ));
    }
    best.map(|(_, m)| m)
        .filter(|m| m.score.c_w >= cfg.min_match_cost)
}
