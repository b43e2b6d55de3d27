//! Robust projective alignment from point correspondences: Hartley-normalized
//! DLT inside a seeded RANSAC loop, with translation and identity fallbacks.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RansacConfig;
use crate::error::{Error, Result};
use crate::flow::FlowPoint;
use crate::imgproc::Homography3x3;

type Pt = (f64, f64);

#[derive(Debug, Clone)]
pub struct HomographyEstimate {
    pub h: Homography3x3,
    /// Inlier flag per tracked pair, in input order of the tracked pairs.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// How the previous frame ended up aligned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    Projective(Homography3x3),
    Translation(f64, f64),
    Unaligned,
}

impl Alignment {
    pub fn homography(&self) -> Homography3x3 {
        match *self {
            Alignment::Projective(h) => h,
            Alignment::Translation(dx, dy) => Homography3x3::translation(dx, dy),
            Alignment::Unaligned => Homography3x3::IDENTITY,
        }
    }
}

/// Similarity transform taking points to zero mean and RMS distance sqrt(2).
fn normalizer(pts: &[Pt]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let ms = pts
        .iter()
        .map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2))
        .sum::<f64>()
        / n;
    let s = if ms > 0.0 {
        std::f64::consts::SQRT_2 / ms.sqrt()
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(m: &Matrix3<f64>, p: Pt) -> Pt {
    let w = m[(2, 0)] * p.0 + m[(2, 1)] * p.1 + m[(2, 2)];
    (
        (m[(0, 0)] * p.0 + m[(0, 1)] * p.1 + m[(0, 2)]) / w,
        (m[(1, 0)] * p.0 + m[(1, 1)] * p.1 + m[(1, 2)]) / w,
    )
}

/// Least-squares DLT on Hartley-normalized points (at least 4 pairs).
pub fn dlt(src: &[Pt], dst: &[Pt]) -> Result<Homography3x3> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::DegenerateCorrespondences(n.min(dst.len())));
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let (x, y) = apply(&ts, src[i]);
        let (u, v) = apply(&td, dst[i]);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Transform("svd did not converge".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let hv = vt.row(k);
    let hn = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Transform("degenerate point spread".into()))?;
    Homography3x3::from_matrix(&(td_inv * hn * ts))
}

pub fn reprojection_error(h: &Homography3x3, src: Pt, dst: Pt) -> f64 {
    match h.apply(src.0, src.1) {
        Some((x, y)) => (x - dst.0).hypot(y - dst.1),
        None => f64::INFINITY,
    }
}

fn collinear(a: Pt, b: Pt, c: Pt) -> bool {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs() < 1e-6
}

fn degenerate_sample(p: &[Pt; 4]) -> bool {
    collinear(p[0], p[1], p[2])
        || collinear(p[0], p[1], p[3])
        || collinear(p[0], p[2], p[3])
        || collinear(p[1], p[2], p[3])
}

fn count_inliers(h: &Homography3x3, src: &[Pt], dst: &[Pt], tol: f64) -> (Vec<bool>, usize) {
    let mask: Vec<bool> = src
        .iter()
        .zip(dst)
        .map(|(&s, &d)| reprojection_error(h, s, d) < tol)
        .collect();
    let n = mask.iter().filter(|&&b| b).count();
    (mask, n)
}

fn subset(pts: &[Pt], mask: &[bool]) -> Vec<Pt> {
    pts.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&p, _)| p)
        .collect()
}

/// RANSAC-wrapped DLT over the tracked pairs; the final transform is refit on
/// all inliers.
pub fn estimate_homography(pairs: &[FlowPoint], cfg: &RansacConfig) -> Result<HomographyEstimate> {
    let (src, dst): (Vec<Pt>, Vec<Pt>) = pairs
        .iter()
        .filter_map(|fp| fp.dst.map(|d| (fp.src, d)))
        .unzip();
    let n = src.len();
    if n < 4 {
        return Err(Error::DegenerateCorrespondences(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<bool>, usize)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, n, 4);
        let s = [src[idx.index(0)], src[idx.index(1)], src[idx.index(2)], src[idx.index(3)]];
        let d = [dst[idx.index(0)], dst[idx.index(1)], dst[idx.index(2)], dst[idx.index(3)]];
        if degenerate_sample(&s) || degenerate_sample(&d) {
            continue;
        }
        let Ok(h) = dlt(&s, &d) else { continue };
        let (mask, count) = count_inliers(&h, &src, &dst, cfg.inlier_tol);
        if best.as_ref().is_none_or(|b| count > b.1) {
            let all = count == n;
            best = Some((mask, count));
            if all {
                break;
            }
        }
    }
    let (mut mask, mut count) = best.unwrap_or((vec![false; n], 0));
    if count < 4 {
        return Err(Error::EstimationFailed(count));
    }
    let mut h = dlt(&subset(&src, &mask), &subset(&dst, &mask))?;
    let (mask2, count2) = count_inliers(&h, &src, &dst, cfg.inlier_tol);
    if mask2 != mask && count2 >= 4 {
        h = dlt(&subset(&src, &mask2), &subset(&dst, &mask2))?;
        mask = mask2;
        count = count2;
    }
    Ok(HomographyEstimate {
        h,
        inliers: mask,
        inlier_count: count,
    })
}

/// Projective fit, falling back to the mean flow vector, then to no alignment.
pub fn align_with_fallback(pairs: &[FlowPoint], cfg: &RansacConfig) -> Alignment {
    match estimate_homography(pairs, cfg) {
        Ok(est) => return Alignment::Projective(est.h),
        Err(e) => log::debug!("projective alignment unavailable: {e}"),
    }
    let tracked: Vec<(Pt, Pt)> = pairs
        .iter()
        .filter_map(|fp| fp.dst.map(|d| (fp.src, d)))
        .collect();
    if tracked.is_empty() {
        return Alignment::Unaligned;
    }
    let n = tracked.len() as f64;
    let (dx, dy) = tracked.iter().fold((0.0, 0.0), |(ax, ay), (s, d)| {
        (ax + (d.0 - s.0) / n, ay + (d.1 - s.1) / n)
    });
    Alignment::Translation(dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pairs_from(h: &Homography3x3, pts: &[Pt]) -> Vec<FlowPoint> {
        pts.iter()
            .map(|&p| FlowPoint {
                src: p,
                dst: h.apply(p.0, p.1),
                residual: 0.0,
            })
            .collect()
    }

    fn lattice(n: usize, spacing: f64) -> Vec<Pt> {
        (0..n * n)
            .map(|i| ((i % n) as f64 * spacing + 3.0, (i / n) as f64 * spacing + 5.0))
            .collect()
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Homography3x3 {
        let mut j = |s: f64| rng.random_range(-s..s);
        Homography3x3::new([
            1.0 + j(0.1),
            j(0.1),
            j(10.0),
            j(0.1),
            1.0 + j(0.1),
            j(10.0),
            j(1e-4),
            j(1e-4),
            1.0,
        ])
        .unwrap()
    }

    #[test]
    fn identity_recovered() {
        let pairs = pairs_from(&Homography3x3::IDENTITY, &lattice(5, 10.0));
        let est = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
        for (a, b) in est.h.coeffs().iter().zip(Homography3x3::IDENTITY.coeffs()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn planted_homography_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_h(&mut rng);
        let pts: Vec<Pt> = (0..20)
            .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let est = estimate_homography(&pairs_from(&h, &pts), &RansacConfig::default()).unwrap();
        for &p in &pts {
            let t = h.apply(p.0, p.1).unwrap();
            assert!(reprojection_error(&est.h, p, t) <= 1e-3);
        }
    }

    #[test]
    fn planted_outliers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = random_h(&mut rng);
        let pts: Vec<Pt> = (0..25)
            .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let mut pairs = pairs_from(&h, &pts);
        for fp in pairs.iter_mut().skip(20) {
            let d = fp.dst.unwrap();
            fp.dst = Some((d.0 + 25.0 + rng.random_range(0.0..20.0), d.1 - 30.0));
        }
        let cfg = RansacConfig {
            inlier_tol: 1.0,
            ..Default::default()
        };
        let est = estimate_homography(&pairs, &cfg).unwrap();
        assert_eq!(est.inlier_count, 20);
        assert!(est.inliers[..20].iter().all(|&b| b));
        assert!(est.inliers[20..].iter().all(|&b| !b));
    }

    #[test]
    fn translation_only_has_affine_bottom_row() {
        let t = Homography3x3::translation(2.5, -1.0);
        let est = estimate_homography(&pairs_from(&t, &lattice(4, 7.0)), &RansacConfig::default())
            .unwrap();
        let c = est.h.coeffs();
        assert!(c[6].abs() < 1e-6 && c[7].abs() < 1e-6 && (c[8] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = random_h(&mut rng);
        let pts = lattice(5, 9.0);
        let pairs = pairs_from(&h, &pts);
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let a = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
        let b = estimate_homography(&shuffled, &RansacConfig::default()).unwrap();
        for &p in &pts {
            let pa = a.h.apply(p.0, p.1).unwrap();
            let pb = b.h.apply(p.0, p.1).unwrap();
            assert!((pa.0 - pb.0).hypot(pa.1 - pb.1) < 1e-6);
        }
    }

    #[test]
    fn too_few_pairs() {
        let pairs = pairs_from(&Homography3x3::IDENTITY, &lattice(1, 1.0));
        assert!(matches!(
            estimate_homography(&pairs, &RansacConfig::default()),
            Err(Error::DegenerateCorrespondences(1))
        ));
    }

    #[test]
    fn fallback_chain() {
        // collinear points defeat the projective fit but not the mean flow
        let line: Vec<FlowPoint> = (0..6)
            .map(|i| FlowPoint {
                src: (i as f64, 0.0),
                dst: Some((i as f64 + 1.0, 2.0)),
                residual: 0.0,
            })
            .collect();
        match align_with_fallback(&line, &RansacConfig::default()) {
            Alignment::Translation(dx, dy) => {
                assert!((dx - 1.0).abs() < 1e-12 && (dy - 2.0).abs() < 1e-12)
            }
            other => panic!("expected translation, got {other:?}"),
        }
        let lost = vec![FlowPoint {
            src: (0.0, 0.0),
            dst: None,
            residual: 0.0,
        }];
        assert_eq!(
            align_with_fallback(&lost, &RansacConfig::default()),
            Alignment::Unaligned
        );
    }
}
