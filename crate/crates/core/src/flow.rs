//! Grid keypoint seeding and pyramidal Lucas–Kanade point tracking.

use crate::config::FlowConfig;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{Plane, Raster};

/// A tracked correspondence; `dst` is `None` when tracking failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub src: (f64, f64),
    pub dst: Option<(f64, f64)>,
    /// Mean absolute window difference at convergence, 8-bit intensity units.
    pub residual: f64,
}

impl FlowPoint {
    pub fn tracked(&self) -> bool {
        self.dst.is_some()
    }

    fn lost(src: (f64, f64)) -> Self {
        Self {
            src,
            dst: None,
            residual: 0.0,
        }
    }
}

/// Lattice points at spacing `step` inside `region`, dropping points closer
/// than `margin` to the edges of a `bounds`-sized frame. A region smaller than
/// one step yields its center.
pub fn grid_keypoints(
    region: &BBox,
    step: usize,
    bounds: (usize, usize),
    margin: f64,
) -> Vec<(f64, f64)> {
    let step = step.max(1) as f64;
    let nx = (region.w() / step).floor() as usize;
    let ny = (region.h() / step).floor() as usize;
    let pts: Vec<(f64, f64)> = if nx == 0 || ny == 0 {
        vec![region.center()]
    } else {
        (0..ny)
            .flat_map(|j| {
                (0..nx).map(move |i| {
                    (
                        region.x() + step * (i as f64 + 0.5),
                        region.y() + step * (j as f64 + 0.5),
                    )
                })
            })
            .collect()
    };
    let (bw, bh) = (bounds.0 as f64, bounds.1 as f64);
    pts.into_iter()
        .filter(|&(x, y)| x >= margin && y >= margin && x <= bw - margin && y <= bh - margin)
        .collect()
}

struct Level {
    img: Plane,
    gx: Plane,
    gy: Plane,
}

fn downsample(p: &Plane) -> Plane {
    let w = (p.width / 2).max(1);
    let h = (p.height / 2).max(1);
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (2 * x as isize, 2 * y as isize);
            out.data[y * w + x] = 0.25
                * (p.get_clamped(sx, sy)
                    + p.get_clamped(sx + 1, sy)
                    + p.get_clamped(sx, sy + 1)
                    + p.get_clamped(sx + 1, sy + 1));
        }
    }
    out
}

fn gradients(p: &Plane) -> (Plane, Plane) {
    let mut gx = Plane::zeros(p.width, p.height);
    let mut gy = Plane::zeros(p.width, p.height);
    for y in 0..p.height as isize {
        for x in 0..p.width as isize {
            let i = y as usize * p.width + x as usize;
            gx.data[i] = 0.5 * (p.get_clamped(x + 1, y) - p.get_clamped(x - 1, y));
            gy.data[i] = 0.5 * (p.get_clamped(x, y + 1) - p.get_clamped(x, y - 1));
        }
    }
    (gx, gy)
}

fn pyramid(r: &Raster, levels: usize, with_grad: bool) -> Vec<Level> {
    let mut base = r.to_plane();
    base.data.iter_mut().for_each(|v| *v /= 255.0);
    let mut out: Vec<Level> = Vec::with_capacity(levels);
    let mut cur = base;
    for l in 0..levels {
        if l > 0 {
            cur = downsample(&out[l - 1].img);
        }
        let (gx, gy) = if with_grad {
            gradients(&cur)
        } else {
            (Plane::zeros(0, 0), Plane::zeros(0, 0))
        };
        out.push(Level {
            img: std::mem::replace(&mut cur, Plane::zeros(0, 0)),
            gx,
            gy,
        });
    }
    out
}

/// Tracks `pts` from `prev` into `curr`, coarse to fine. The output has one
/// entry per input point, in order.
pub fn pyr_lk_track(
    prev: &Raster,
    curr: &Raster,
    pts: &[(f64, f64)],
    params: &FlowConfig,
) -> Result<Vec<FlowPoint>> {
    if prev.dims() != curr.dims() {
        return Err(Error::Param(format!(
            "frame dimensions differ: {:?} vs {:?}",
            prev.dims(),
            curr.dims()
        )));
    }
    if params.levels == 0 || params.win < 3 || params.win % 2 == 0 {
        return Err(Error::Param("levels >= 1 and odd win >= 3 required".into()));
    }
    // no point building levels smaller than the window
    let mut levels = params.levels;
    while levels > 1 && (prev.width() >> (levels - 1)).min(prev.height() >> (levels - 1)) < params.win
    {
        levels -= 1;
    }
    let pyr_i = pyramid(prev, levels, true);
    let pyr_j = pyramid(curr, levels, false);
    // Coarse levels can mislead points near the border, where most of the
    // window is clamped; such points get another try on fewer levels.
    Ok(pts
        .iter()
        .map(|&p| {
            let mut fp = track_point(&pyr_i, &pyr_j, p, params);
            let mut l = levels;
            while !fp.tracked() && l > 1 {
                l -= 1;
                fp = track_point(&pyr_i[..l], &pyr_j[..l], p, params);
            }
            fp
        })
        .collect())
}

fn track_point(pyr_i: &[Level], pyr_j: &[Level], src: (f64, f64), prm: &FlowConfig) -> FlowPoint {
    let r = (prm.win / 2) as isize;
    let n = (prm.win * prm.win) as f64;
    let levels = pyr_i.len();
    let mut guess = (0.0f64, 0.0f64);
    let mut win_i = Vec::with_capacity(prm.win * prm.win);

    for lvl in (0..levels).rev() {
        let li = &pyr_i[lvl];
        let lj = &pyr_j[lvl].img;
        let scale = (1u32 << lvl) as f64;
        let px = src.0 / scale - 0.5;
        let py = src.1 / scale - 0.5;

        if lvl == 0 {
            let (w, h) = (li.img.width as f64, li.img.height as f64);
            let rf = r as f64;
            if px - rf < 0.0 || py - rf < 0.0 || px + rf > w - 1.0 || py + rf > h - 1.0 {
                return FlowPoint::lost(src);
            }
        }

        win_i.clear();
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let (qx, qy) = (px + dx as f64, py + dy as f64);
                let iv = li.img.sample_clamped(qx, qy);
                let gx = li.gx.sample_clamped(qx, qy);
                let gy = li.gy.sample_clamped(qx, qy);
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
                win_i.push((iv, gx, gy));
            }
        }
        let tr = 0.5 * (gxx + gyy);
        let min_eig = tr - (0.25 * (gxx - gyy) * (gxx - gyy) + gxy * gxy).sqrt();
        let det = gxx * gyy - gxy * gxy;
        if min_eig / n < prm.min_eigen || det <= f64::EPSILON {
            if lvl == 0 {
                return FlowPoint::lost(src);
            }
            guess = (2.0 * guess.0, 2.0 * guess.1);
            continue;
        }

        let mut v = (0.0f64, 0.0f64);
        for _ in 0..prm.max_iter {
            let (mut bx, mut by) = (0.0, 0.0);
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (iv, gx, gy) = win_i[k];
                    k += 1;
                    let jv = lj.sample_clamped(
                        px + dx as f64 + guess.0 + v.0,
                        py + dy as f64 + guess.1 + v.1,
                    );
                    let diff = iv - jv;
                    bx += diff * gx;
                    by += diff * gy;
                }
            }
            let ex = (gyy * bx - gxy * by) / det;
            let ey = (gxx * by - gxy * bx) / det;
            v.0 += ex;
            v.1 += ey;
            if !v.0.is_finite() || !v.1.is_finite() {
                return FlowPoint::lost(src);
            }
            if (ex * ex + ey * ey).sqrt() < prm.eps / scale {
                break;
            }
        }
        guess = if lvl > 0 {
            (2.0 * (guess.0 + v.0), 2.0 * (guess.1 + v.1))
        } else {
            (guess.0 + v.0, guess.1 + v.1)
        };
    }

    let base_i = &pyr_i[0].img;
    let base_j = &pyr_j[0].img;
    let (px, py) = (src.0 - 0.5, src.1 - 0.5);
    let (qx, qy) = (px + guess.0, py + guess.1);
    let rf = r as f64;
    let (w, h) = (base_j.width as f64, base_j.height as f64);
    let max_disp = (prm.win as f64) * (1u32 << levels) as f64;
    if qx - rf < 0.0
        || qy - rf < 0.0
        || qx + rf > w - 1.0
        || qy + rf > h - 1.0
        || guess.0.hypot(guess.1) > max_disp
    {
        return FlowPoint::lost(src);
    }
    let mut sad = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let a = base_i.sample_clamped(px + dx as f64, py + dy as f64);
            let b = base_j.sample_clamped(qx + dx as f64, qy + dy as f64);
            sad += (a - b).abs();
        }
    }
    FlowPoint {
        src,
        dst: Some((src.0 + guess.0, src.1 + guess.1)),
        residual: 255.0 * sad / n,
    }
}
