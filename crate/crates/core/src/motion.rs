//! Moving-region extraction around the last known target position: align
//! the frame from two steps back onto the current one, difference, clean up
//! and label what moved.

use crate::config::{PipelineConfig, SmoothingOrder};
use crate::error::{Error, Result};
use crate::flow::{grid_keypoints, pyr_lk_track, FlowPoint};
use crate::geometry::BBox;
use crate::homography::{align_with_fallback, Alignment};
use crate::imgproc::{
    connected_components, dilate, erode, gaussian_blur, median_filter, otsu_threshold,
    threshold_binary, warp_region,
};
use crate::raster::{Frame, Raster};

/// A moving blob in full-frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCandidate {
    pub bbox: BBox,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// Intermediate rasters of one extraction, for debug dumps.
#[derive(Debug, Clone)]
pub struct MotionDebug {
    /// Extraction window `(x0, y0, side_w, side_h)` in frame coordinates.
    pub region: (usize, usize, usize, usize),
    pub alignment: Alignment,
    pub aligned: Raster,
    pub diff: Raster,
    pub binary: Raster,
    pub cleaned: Raster,
}

/// The `side x side` window centered on `(cx, cy)`, shifted to stay inside
/// the frame.
pub fn crop_window(cx: f64, cy: f64, side: usize, dims: (usize, usize)) -> (usize, usize, usize, usize) {
    let sw = side.min(dims.0);
    let sh = side.min(dims.1);
    let x0 = (cx - sw as f64 / 2.0).round().clamp(0.0, (dims.0 - sw) as f64) as usize;
    let y0 = (cy - sh as f64 / 2.0).round().clamp(0.0, (dims.1 - sh) as f64) as usize;
    (x0, y0, sw, sh)
}

fn track_in_window(
    prev: &Raster,
    curr: &Raster,
    pts: &[(f64, f64)],
    window: (usize, usize, usize, usize),
    cfg: &PipelineConfig,
) -> Result<Vec<FlowPoint>> {
    let (x0, y0, w, h) = window;
    let pad = (cfg.flow.win / 2 + 2) << (cfg.flow.levels - 1);
    let (fw, fh) = prev.dims();
    let px0 = x0.saturating_sub(pad);
    let py0 = y0.saturating_sub(pad);
    let px1 = (x0 + w + pad).min(fw);
    let py1 = (y0 + h + pad).min(fh);
    let a = prev.crop(px0, py0, px1 - px0, py1 - py0)?;
    let b = curr.crop(px0, py0, px1 - px0, py1 - py0)?;
    let (ox, oy) = (px0 as f64, py0 as f64);
    let local: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x - ox, y - oy)).collect();
    Ok(pyr_lk_track(&a, &b, &local, &cfg.flow)?
        .into_iter()
        .map(|fp| FlowPoint {
            src: (fp.src.0 + ox, fp.src.1 + oy),
            dst: fp.dst.map(|(x, y)| (x + ox, y + oy)),
            residual: fp.residual,
        })
        .collect())
}

/// Candidate moving regions between `f_prev2` and `f_curr` around `anchor`,
/// largest first.
pub fn extract_candidates(
    f_prev2: &Frame,
    f_curr: &Frame,
    anchor: &BBox,
    cfg: &PipelineConfig,
) -> Result<Vec<MotionCandidate>> {
    extract_candidates_debug(f_prev2, f_curr, anchor, cfg).map(|(c, _)| c)
}

pub fn extract_candidates_debug(
    f_prev2: &Frame,
    f_curr: &Frame,
    anchor: &BBox,
    cfg: &PipelineConfig,
) -> Result<(Vec<MotionCandidate>, MotionDebug)> {
    let dims = f_curr.gray.dims();
    if f_prev2.gray.dims() != dims {
        return Err(Error::Param("frames differ in size".into()));
    }
    let (cx, cy) = anchor.center();
    if !(cx >= 0.0 && cy >= 0.0 && cx < dims.0 as f64 && cy < dims.1 as f64) {
        return Err(Error::Param(format!("anchor center ({cx}, {cy}) outside frame")));
    }
    let window = crop_window(cx, cy, cfg.delta_p, dims);
    let (x0, y0, w, h) = window;

    let margin = (cfg.flow.win / 2 + 1) as f64;
    let pairs = if cfg.ransac.full_frame {
        let region = BBox::new(0.0, 0.0, dims.0 as f64, dims.1 as f64)?;
        let step = cfg.flow.grid_step.max(dims.0.max(dims.1) / 20);
        let pts = grid_keypoints(&region, step, dims, margin);
        pyr_lk_track(&f_prev2.gray, &f_curr.gray, &pts, &cfg.flow)?
    } else {
        let region = BBox::new(x0 as f64, y0 as f64, w as f64, h as f64)?;
        let pts = grid_keypoints(&region, cfg.flow.grid_step, dims, margin);
        track_in_window(&f_prev2.gray, &f_curr.gray, &pts, window, cfg)?
    };
    let alignment = align_with_fallback(&pairs, &cfg.ransac);
    let hmg = alignment.homography();
    let (warped, valid) = match warp_region(&f_prev2.gray, &hmg, x0, y0, w, h) {
        Ok(v) => v,
        Err(e) => {
            log::debug!("warp failed ({e}); differencing unaligned");
            warp_region(&f_prev2.gray, &crate::imgproc::Homography3x3::IDENTITY, x0, y0, w, h)?
        }
    };
    let current = f_curr.gray.crop(x0, y0, w, h)?;

    let mut shift = 0.0;
    if cfg.motion.photometric_correction {
        let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
        for (i, &ok) in valid.iter().enumerate() {
            if ok {
                sa += warped.data[i];
                sb += current.data()[i] as f64;
                n += 1;
            }
        }
        if n > 0 {
            shift = (sb - sa) / n as f64;
        }
    }
    let aligned = warped.to_raster();
    let diff_data: Vec<u8> = (0..w * h)
        .map(|i| {
            if valid[i] {
                let a = warped.data[i] + shift;
                (current.data()[i] as f64 - a).abs().round().min(255.0) as u8
            } else {
                0
            }
        })
        .collect();
    let diff = Raster::from_vec(w, h, diff_data)?;

    let m = &cfg.motion;
    let t = otsu_threshold(&diff).max(m.threshold_floor);
    let binary = threshold_binary(&diff, t);
    let mut cleaned = dilate(&erode(&binary, m.morph_ksize)?, m.morph_ksize)?;
    cleaned = match m.smoothing_order {
        SmoothingOrder::MedianThenGaussian => gaussian_blur(
            &median_filter(&cleaned, m.median_ksize)?,
            m.blur_sigma,
            m.blur_ksize,
        )?,
        SmoothingOrder::GaussianThenMedian => median_filter(
            &gaussian_blur(&cleaned, m.blur_sigma, m.blur_ksize)?,
            m.median_ksize,
        )?,
    };
    cleaned = threshold_binary(&cleaned, m.final_threshold);

    let mut cands: Vec<MotionCandidate> = connected_components(&cleaned, m.min_area)
        .into_iter()
        .map(|c| MotionCandidate {
            bbox: c.bbox.translate(x0 as f64, y0 as f64),
            area: c.area,
            centroid: (c.centroid.0 + x0 as f64, c.centroid.1 + y0 as f64),
        })
        .collect();
    // stable: equal areas keep scan order
    cands.sort_by(|a, b| b.area.cmp(&a.area));
    cands.truncate(m.max_candidates);

    let dbg = MotionDebug {
        region: window,
        alignment,
        aligned,
        diff,
        binary,
        cleaned,
    };
    Ok((cands, dbg))
}
