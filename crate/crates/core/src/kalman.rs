//! Eight-state constant-velocity Kalman filter over `[x, y, w, h]` and their
//! per-frame rates, plus the positive-IOU match verification rule.

use nalgebra::{SMatrix, SVector};

use crate::config::KalmanConfig;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat4x8 = SMatrix<f64, 4, 8>;
pub type Mat4 = SMatrix<f64, 4, 4>;
pub type Vec4 = SVector<f64, 4>;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_hat: Vec8,
    pub p: Mat8,
    pub f: Mat8,
    pub h: Mat4x8,
    pub q: Mat8,
    pub r: Mat4,
    /// Measurement updates applied since initialization.
    pub updates: usize,
}

/// Identity plus unit coupling of each position component to its rate.
pub fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

pub fn observation() -> Mat4x8 {
    let mut h = Mat4x8::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement(b: &BBox) -> Vec4 {
    Vec4::new(b.x(), b.y(), b.w(), b.h())
}

fn symmetrize(p: &mut Mat8) {
    *p = (*p + p.transpose()) * 0.5;
}

impl KalmanState {
    pub fn init(b: &BBox, cfg: &KalmanConfig) -> Self {
        let mut x_hat = Vec8::zeros();
        x_hat.fixed_rows_mut::<4>(0).copy_from(&measurement(b));
        let mut p0 = Vec8::zeros();
        let mut qd = Vec8::zeros();
        for i in 0..4 {
            p0[i] = cfg.p0_pos;
            p0[i + 4] = cfg.p0_vel;
            qd[i] = cfg.q_pos;
            qd[i + 4] = cfg.q_vel;
        }
        Self {
            x_hat,
            p: Mat8::from_diagonal(&p0),
            f: transition(),
            h: observation(),
            q: Mat8::from_diagonal(&qd),
            r: Mat4::from_diagonal_element(cfg.r),
            updates: 1,
        }
    }

    /// Time update.
    pub fn predict(&self) -> Self {
        let mut p = self.f * self.p * self.f.transpose() + self.q;
        symmetrize(&mut p);
        Self {
            x_hat: self.f * self.x_hat,
            p,
            ..self.clone()
        }
    }

    /// Measurement update with a box observation.
    pub fn update(&self, z: &BBox) -> Result<Self> {
        let y = measurement(z) - self.h * self.x_hat;
        let ht = self.h.transpose();
        let s = self.h * self.p * ht + self.r;
        let s_inv = s.try_inverse().ok_or(Error::FilterDiverged)?;
        if s_inv.iter().any(|v| !v.is_finite()) || s.determinant().abs() < 1e-300 {
            return Err(Error::FilterDiverged);
        }
        let k = self.p * ht * s_inv;
        let x_hat = self.x_hat + k * y;
        let mut p = (Mat8::identity() - k * self.h) * self.p;
        symmetrize(&mut p);
        Ok(Self {
            x_hat,
            p,
            updates: self.updates + 1,
            ..self.clone()
        })
    }

    /// The state's box, with sizes floored at one pixel.
    pub fn bbox(&self) -> BBox {
        let v = &self.x_hat;
        BBox::new(v[0], v[1], v[2].max(1.0), v[3].max(1.0)).expect("finite state")
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.x_hat[4], self.x_hat[5])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    ConfirmMatch,
    UsePrediction,
}

/// Accepts the match when it overlaps the predicted box at all.
pub fn verify_match(prior: &KalmanState, matched: &BBox) -> Verification {
    if iou(&prior.bbox(), matched) > 0.0 {
        Verification::ConfirmMatch
    } else {
        Verification::UsePrediction
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn init_zero_velocity() {
        let cfg = KalmanConfig::default();
        let s = KalmanState::init(&bx(10., 20., 5., 5.), &cfg);
        assert_eq!(
            s.x_hat.as_slice(),
            &[10., 20., 5., 5., 0., 0., 0., 0.]
        );
        for i in 0..4 {
            assert_eq!(s.p[(i, i)], cfg.p0_pos);
            assert_eq!(s.p[(i + 4, i + 4)], cfg.p0_vel);
        }
        assert_eq!(s, KalmanState::init(&bx(10., 20., 5., 5.), &cfg));
    }

    #[test]
    fn predict_constant_velocity() {
        let mut s = KalmanState::init(&bx(0., 0., 10., 10.), &KalmanConfig::default());
        s.x_hat[4] = 1.0;
        s.x_hat[5] = 2.0;
        let p = s.predict();
        assert_eq!(&p.x_hat.as_slice()[..4], &[1., 2., 10., 10.]);
    }

    #[test]
    fn zero_noise_stays_zero() {
        let cfg = KalmanConfig {
            q_pos: 0.0,
            q_vel: 0.0,
            p0_pos: 0.0,
            p0_vel: 0.0,
            ..Default::default()
        };
        let s = KalmanState::init(&bx(0., 0., 3., 3.), &cfg).predict();
        assert_eq!(s.p, Mat8::zeros());
    }

    #[test]
    fn exact_measurement_limit() {
        let cfg = KalmanConfig {
            r: 1e-12,
            ..Default::default()
        };
        let s = KalmanState::init(&bx(0., 0., 4., 4.), &cfg).predict();
        let z = bx(3., -2., 5., 6.);
        let u = s.update(&z).unwrap();
        for (a, b) in u.x_hat.iter().take(4).zip([3., -2., 5., 6.]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_innovation_keeps_state() {
        let s = KalmanState::init(&bx(5., 5., 4., 3.), &KalmanConfig::default()).predict();
        let u = s.update(&s.bbox()).unwrap();
        assert!((u.x_hat - s.x_hat).norm() < 1e-12);
        assert!(u.p.trace() <= s.p.trace());
    }

    #[test]
    fn verification_rule() {
        let s = KalmanState::init(&bx(10., 10., 4., 3.), &KalmanConfig::default());
        assert_eq!(verify_match(&s, &bx(10., 10., 4., 3.)), Verification::ConfirmMatch);
        assert_eq!(verify_match(&s, &bx(30., 10., 4., 3.)), Verification::UsePrediction);
        // overlap sliver of 0.01 x 3 px
        assert_eq!(verify_match(&s, &bx(13.99, 10., 4., 3.)), Verification::ConfirmMatch);
        assert_eq!(verify_match(&s, &bx(14., 10., 4., 3.)), Verification::UsePrediction);
    }

    #[test]
    fn noiseless_track_converges() {
        let cfg = KalmanConfig::default();
        let truth = |t: f64| bx(10.0 + 2.0 * t, 5.0 - 1.5 * t, 4.0, 3.0);
        let mut s = KalmanState::init(&truth(0.0), &cfg);
        for t in 1..=10 {
            s = s.predict().update(&truth(t as f64)).unwrap();
        }
        // the filter still carries a lag after 10 steps; keep going until the
        // velocity settles, then check the one-step prediction
        for t in 11..=60 {
            s = s.predict().update(&truth(t as f64)).unwrap();
        }
        let p = s.predict().bbox();
        let t = truth(61.0);
        assert!((p.x() - t.x()).abs() < 1e-3 && (p.y() - t.y()).abs() < 1e-3);
    }
}
