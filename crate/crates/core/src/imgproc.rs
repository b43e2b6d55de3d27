//! Grayscale raster primitives for motion extraction.
//!
//! Filters replicate borders; warping zero-fills samples that fall outside
//! the source. Binary rasters use the values {0, 255}.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{Plane, Raster};

fn check_ksize(ksize: usize) -> Result<()> {
    if ksize == 0 || ksize % 2 == 0 {
        return Err(Error::Param(format!(
            "kernel size must be odd and positive, got {ksize}"
        )));
    }
    Ok(())
}

fn check_binary(img: &Raster) -> Result<()> {
    if img.data().iter().any(|&v| v != 0 && v != 255) {
        return Err(Error::Param("expected a binary {0, 255} raster".into()));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps, center tap at index `ksize / 2`.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    check_ksize(ksize)?;
    if !(sigma > 0.0) {
        return Err(Error::Param(format!("sigma must be positive, got {sigma}")));
    }
    let r = (ksize / 2) as f64;
    let mut k: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Separable Gaussian convolution in floating point.
pub fn gaussian_blur_plane(img: &Plane, sigma: f64, ksize: usize) -> Result<Plane> {
    let k = gaussian_kernel(sigma, ksize)?;
    if ksize == 1 {
        return Ok(img.clone());
    }
    let r = (ksize / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + i as isize - r);
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

pub fn gaussian_blur(img: &Raster, sigma: f64, ksize: usize) -> Result<Raster> {
    if ksize == 1 {
        check_ksize(ksize)?;
        return Ok(img.clone());
    }
    Ok(gaussian_blur_plane(&img.to_plane(), sigma, ksize)?.to_raster())
}

pub fn median_filter(img: &Raster, ksize: usize) -> Result<Raster> {
    check_ksize(ksize)?;
    let r = (ksize / 2) as isize;
    let mid = ksize * ksize / 2;
    let mut window = Vec::with_capacity(ksize * ksize);
    let mut out = Raster::new(img.width(), img.height(), 0);
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    window.push(img.get_clamped(x + dx, y + dy));
                }
            }
            let (_, m, _) = window.select_nth_unstable(mid);
            out.set(x as usize, y as usize, *m);
        }
    }
    Ok(out)
}

fn morph(img: &Raster, ksize: usize, pick_max: bool) -> Result<Raster> {
    check_ksize(ksize)?;
    check_binary(img)?;
    let r = (ksize / 2) as isize;
    let mut out = Raster::new(img.width(), img.height(), 0);
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut v = if pick_max { 0u8 } else { 255u8 };
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let p = img.get_clamped(x + dx, y + dy);
                    if pick_max && p == 255 {
                        v = 255;
                        break 'win;
                    }
                    if !pick_max && p == 0 {
                        v = 0;
                        break 'win;
                    }
                }
            }
            out.set(x as usize, y as usize, v);
        }
    }
    Ok(out)
}

/// Binary erosion with a `ksize x ksize` square.
pub fn erode(img: &Raster, ksize: usize) -> Result<Raster> {
    morph(img, ksize, false)
}

/// Binary dilation with a `ksize x ksize` square.
pub fn dilate(img: &Raster, ksize: usize) -> Result<Raster> {
    morph(img, ksize, true)
}

/// `255` where the pixel is strictly above `t`, else `0`.
pub fn threshold_binary(img: &Raster, t: u8) -> Raster {
    let data = img
        .data()
        .iter()
        .map(|&v| if v > t { 255 } else { 0 })
        .collect();
    Raster::from_vec(img.width(), img.height(), data).expect("same dims")
}

/// Otsu's threshold: the level maximizing between-class variance, usable
/// directly with [`threshold_binary`].
pub fn otsu_threshold(img: &Raster) -> u8 {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let total = img.data().len() as f64;
    if total == 0.0 {
        return 0;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0u8, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn abs_diff(a: &Raster, b: &Raster) -> Result<Raster> {
    if a.dims() != b.dims() {
        return Err(Error::Param(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| p.abs_diff(q))
        .collect();
    Raster::from_vec(a.width(), a.height(), data)
}

pub fn invert(img: &Raster) -> Raster {
    let data = img.data().iter().map(|&v| 255 - v).collect();
    Raster::from_vec(img.width(), img.height(), data).expect("same dims")
}

/// A 3x3 projective transform in continuous pixel coordinates, row-major,
/// normalized so the bottom-right coefficient is 1 whenever it is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography3x3 {
    m: [f64; 9],
}

impl Homography3x3 {
    pub const IDENTITY: Homography3x3 = Homography3x3 {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };

    pub fn new(m: [f64; 9]) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Transform("non-finite coefficient".into()));
        }
        let mut m = m;
        if m[8] != 0.0 {
            let s = m[8];
            m.iter_mut().for_each(|v| *v /= s);
        }
        let det2 = m[0] * m[4] - m[1] * m[3];
        if !det2.is_finite() || det2.abs() < 1e-12 {
            return Err(Error::Transform("degenerate linear part".into()));
        }
        Ok(Self { m })
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0],
        }
    }

    pub fn coeffs(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.m)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let mut a = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                a[r * 3 + c] = m[(r, c)];
            }
        }
        Self::new(a)
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[6] * x + m[7] * y + m[8];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (m[0] * x + m[1] * y + m[2]) / w,
            (m[3] * x + m[4] * y + m[5]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Transform("singular homography".into()))?;
        Self::from_matrix(&inv)
    }

    pub fn compose(&self, then: &Homography3x3) -> Result<Self> {
        Self::from_matrix(&(then.matrix() * self.matrix()))
    }
}

/// Warps `img` by `h` (source to destination) into a `out_w x out_h` raster.
pub fn warp_perspective(
    img: &Raster,
    h: &Homography3x3,
    out_w: usize,
    out_h: usize,
) -> Result<Raster> {
    let (plane, _) = warp_region(img, h, 0, 0, out_w, out_h)?;
    Ok(plane.to_raster())
}

/// Warps into the destination window `[x0, x0+w) x [y0, y0+h)` by inverse
/// mapping with bilinear sampling. Also returns a per-pixel mask of which
/// outputs had a valid source sample.
pub fn warp_region(
    src: &Raster,
    h: &Homography3x3,
    x0: usize,
    y0: usize,
    w: usize,
    hgt: usize,
) -> Result<(Plane, Vec<bool>)> {
    let hm = h.matrix();
    if hm.determinant().abs() < 1e-12 {
        return Err(Error::Transform("singular homography".into()));
    }
    let inv = h.inverse()?;
    let mut out = Plane::zeros(w, hgt);
    let mut valid = vec![false; w * hgt];
    let max_x = src.width() as f64 - 1.0;
    let max_y = src.height() as f64 - 1.0;
    const EDGE: f64 = 1e-9;
    for v in 0..hgt {
        for u in 0..w {
            let px = (x0 + u) as f64 + 0.5;
            let py = (y0 + v) as f64 + 0.5;
            let Some((sx, sy)) = inv.apply(px, py) else {
                continue;
            };
            let (ix, iy) = (sx - 0.5, sy - 0.5);
            if ix < -EDGE || iy < -EDGE || ix > max_x + EDGE || iy > max_y + EDGE {
                continue;
            }
            out.data[v * w + u] = src.sample_clamped(ix, iy);
            valid[v * w + u] = true;
        }
    }
    Ok((out, valid))
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub bbox: BBox,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// 8-connected labeling of a binary raster. Components smaller than
/// `min_area` are dropped; the rest come out in raster-scan order of their
/// first pixel.
pub fn connected_components(img: &Raster, min_area: usize) -> Vec<ComponentStats> {
    let (w, h) = img.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || img.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut minx, mut miny, mut maxx, mut maxy) = (usize::MAX, usize::MAX, 0, 0);
        let (mut sx, mut sy, mut area) = (0.0, 0.0, 0usize);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            area += 1;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            minx = minx.min(x);
            miny = miny.min(y);
            maxx = maxx.max(x);
            maxy = maxy.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && img.data()[q] != 0 {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if area >= min_area.max(1) {
            let bbox = BBox::new(
                minx as f64,
                miny as f64,
                (maxx - minx + 1) as f64,
                (maxy - miny + 1) as f64,
            )
            .expect("nonempty component");
            out.push(ComponentStats {
                bbox,
                area,
                centroid: (sx / area as f64, sy / area as f64),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.random())
    }

    fn binary_from(rows: &[&str]) -> Raster {
        let h = rows.len();
        let w = rows[0].len();
        Raster::from_fn(w, h, |x, y| {
            if rows[y].as_bytes()[x] == b'#' {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn blur_constant_and_identity() {
        let c = Raster::new(9, 7, 77);
        assert_eq!(gaussian_blur(&c, 1.7, 5).unwrap(), c);
        let r = random_raster(9, 7, 1);
        assert_eq!(gaussian_blur(&r, 2.0, 1).unwrap(), r);
        assert!(gaussian_blur(&r, 1.0, 4).is_err());
        assert!(gaussian_blur(&r, 1.0, 0).is_err());
        assert!(gaussian_blur(&r, 0.0, 3).is_err());
    }

    #[test]
    fn blur_impulse_center_weight() {
        let mut p = Plane::zeros(11, 11);
        p.data[5 * 11 + 5] = 1.0;
        let out = gaussian_blur_plane(&p, 1.0, 5).unwrap();
        // independent normalized 1-D tap: e^0 / sum_{d=-2..2} e^{-d^2/2}
        let norm: f64 = (-2..=2).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).sum();
        let c = 1.0 / norm;
        assert!((out.get(5, 5) - c * c).abs() < 1e-12);
    }

    #[test]
    fn blur_matches_direct_2d_convolution() {
        let r = random_raster(13, 10, 3);
        let sigma = 1.3;
        let ks = 5usize;
        let fast = gaussian_blur_plane(&r.to_plane(), sigma, ks).unwrap();
        let rad = 2isize;
        let g = |d: isize| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-rad..=rad)
            .flat_map(|a| (-rad..=rad).map(move |b| g(a) * g(b)))
            .sum();
        for y in 0..10isize {
            for x in 0..13isize {
                let mut acc = 0.0;
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        acc += g(dx) * g(dy) * r.get_clamped(x + dx, y + dy) as f64;
                    }
                }
                let v = acc / norm;
                assert!((fast.get(x as usize, y as usize) - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn median_examples() {
        let c = Raster::new(6, 6, 40);
        assert_eq!(median_filter(&c, 3).unwrap(), c);
        let mut salt = Raster::new(6, 6, 0);
        salt.set(3, 2, 255);
        assert!(median_filter(&salt, 3).unwrap().data().iter().all(|&v| v == 0));
        assert!(median_filter(&salt, 2).is_err());
    }

    #[test]
    fn median_matches_window_sort() {
        let r = random_raster(8, 8, 9);
        let out = median_filter(&r, 3).unwrap();
        for y in 0..8isize {
            for x in 0..8isize {
                let mut win: Vec<u8> = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                    .map(|(dx, dy)| r.get_clamped(x + dx, y + dy))
                    .collect();
                win.sort();
                assert_eq!(out.get(x as usize, y as usize), win[4]);
            }
        }
    }

    #[test]
    fn morphology_examples() {
        let z = Raster::new(5, 5, 0);
        assert_eq!(erode(&z, 3).unwrap(), z);
        assert_eq!(dilate(&z, 3).unwrap(), z);

        let sq = binary_from(&[".....", ".###.", ".###.", ".###.", "....."]);
        let e = erode(&sq, 3).unwrap();
        assert_eq!(e, binary_from(&[".....", ".....", "..#..", ".....", "....."]));

        let dot = binary_from(&[".....", ".....", "..#..", ".....", "....."]);
        assert_eq!(dilate(&dot, 3).unwrap(), sq);

        assert!(erode(&Raster::new(3, 3, 7), 3).is_err());
    }

    #[test]
    fn morphology_duality_and_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = Raster::from_fn(16, 12, |_, _| if rng.random_bool(0.4) { 255 } else { 0 });
        let d = dilate(&img, 3).unwrap();
        let e = erode(&img, 3).unwrap();
        let dual = invert(&dilate(&invert(&img), 3).unwrap());
        for y in 1..11 {
            for x in 1..15 {
                assert_eq!(e.get(x, y), dual.get(x, y));
            }
        }
        for i in 0..img.data().len() {
            assert!(d.data()[i] >= img.data()[i]);
            assert!(e.data()[i] <= img.data()[i]);
        }
    }

    #[test]
    fn threshold_examples() {
        let r = random_raster(10, 10, 4);
        assert!(threshold_binary(&r, 255).data().iter().all(|&v| v == 0));
        let two = Raster::from_vec(2, 1, vec![0, 10]).unwrap();
        assert_eq!(threshold_binary(&two, 0).data(), &[0, 255]);
        for t in [0u8, 17, 128, 254] {
            let once = threshold_binary(&r, t);
            assert_eq!(threshold_binary(&once, t), once);
        }
    }

    #[test]
    fn otsu_splits_bimodal() {
        let img = Raster::from_fn(20, 1, |x, _| if x < 10 { 20 } else { 200 });
        let t = otsu_threshold(&img);
        assert!((20..200).contains(&t));
        assert_eq!(threshold_binary(&img, t).data().iter().filter(|&&v| v == 255).count(), 10);
    }

    #[test]
    fn abs_diff_examples() {
        let a = random_raster(7, 5, 5);
        let b = random_raster(7, 5, 6);
        assert!(abs_diff(&a, &a).unwrap().data().iter().all(|&v| v == 0));
        assert_eq!(abs_diff(&a, &b).unwrap(), abs_diff(&b, &a).unwrap());
        let c200 = Raster::new(3, 3, 200);
        let c10 = Raster::new(3, 3, 10);
        assert!(abs_diff(&c200, &c10).unwrap().data().iter().all(|&v| v == 190));
        assert!(abs_diff(&a, &Raster::new(5, 7, 0)).is_err());
    }

    #[test]
    fn warp_identity_and_translation() {
        let r = random_raster(20, 15, 8);
        assert_eq!(
            warp_perspective(&r, &Homography3x3::IDENTITY, 20, 15).unwrap(),
            r
        );
        let t = Homography3x3::translation(3.0, 0.0);
        let out = warp_perspective(&r, &t, 20, 15).unwrap();
        for y in 0..15 {
            for x in 3..20 {
                assert_eq!(out.get(x, y), r.get(x - 3, y));
            }
            for x in 0..3 {
                assert_eq!(out.get(x, y), 0);
            }
        }
    }

    #[test]
    fn warp_rejects_singular() {
        let r = random_raster(5, 5, 2);
        let sing = Homography3x3 {
            m: [1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert!(matches!(
            warp_perspective(&r, &sing, 5, 5),
            Err(Error::Transform(_))
        ));
        assert!(Homography3x3::new([1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn components_examples() {
        assert!(connected_components(&Raster::new(6, 6, 0), 1).is_empty());

        let two = binary_from(&["##....", "##....", "......", "....##", "....##"]);
        let cc = connected_components(&two, 1);
        assert_eq!(cc.len(), 2);
        assert_eq!(cc[0].area, 4);
        assert_eq!(cc[0].bbox, BBox::new(0., 0., 2., 2.).unwrap());
        assert_eq!(cc[1].bbox, BBox::new(4., 3., 2., 2.).unwrap());
        assert_eq!(cc[1].centroid, (5.0, 4.0));

        let diag = binary_from(&["#..", ".#.", "..#"]);
        assert_eq!(connected_components(&diag, 1).len(), 1);
        assert!(connected_components(&diag, 4).is_empty());
    }

    #[test]
    fn component_areas_sum_to_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let img = Raster::from_fn(30, 20, |_, _| if rng.random_bool(0.3) { 255 } else { 0 });
        let fg = img.data().iter().filter(|&&v| v == 255).count();
        let all: usize = connected_components(&img, 1).iter().map(|c| c.area).sum();
        assert_eq!(all, fg);
        let big: usize = connected_components(&img, 3).iter().map(|c| c.area).sum();
        assert!(big <= fg);
        for c in connected_components(&img, 1) {
            assert!(c.bbox.contains_point(c.centroid.0, c.centroid.1));
        }
    }
}
