//! Boxes, detections and the IOU primitive.
//!
//! Coordinates are continuous pixel coordinates: pixel `(i, j)` covers the
//! half-open square `[i, i+1) x [j, j+1)`, so its center is `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, top-left corner plus strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Intersection with `other`, or `None` when the overlap has no area.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        } else {
            None
        }
    }

    /// Clip to `[0, width) x [0, height)`.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BBox> {
        self.intersect(&BBox {
            x: 0.0,
            y: 0.0,
            w: width,
            h: height,
        })
    }

    pub fn contains_box(&self, other: &BBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
            w: f64,
            h: f64,
        }
        let r = Raw::deserialize(de)?;
        BBox::new(r.x, r.y, r.w, r.h).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    match a.intersect(b) {
        Some(i) => {
            let inter = i.area();
            let union = a.area() + b.area() - inter;
            (inter / union).clamp(0.0, 1.0)
        }
        None => 0.0,
    }
}

/// Which of the four detector paths produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectionMode {
    GlobalYolo,
    GlobalMotion,
    LocalYolo,
    LocalMotion,
}

impl DetectionMode {
    pub const ALL: [DetectionMode; 4] = [
        DetectionMode::GlobalYolo,
        DetectionMode::GlobalMotion,
        DetectionMode::LocalYolo,
        DetectionMode::LocalMotion,
    ];

    pub fn is_motion(self) -> bool {
        matches!(self, DetectionMode::GlobalMotion | DetectionMode::LocalMotion)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionMode::GlobalYolo => "GlobalYolo",
            DetectionMode::GlobalMotion => "GlobalMotion",
            DetectionMode::LocalYolo => "LocalYolo",
            DetectionMode::LocalMotion => "LocalMotion",
        }
    }
}

/// A scored box tagged with the path that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    score: f64,
    pub class_id: i32,
    pub mode: DetectionMode,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, class_id: i32, mode: DetectionMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Param(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            class_id,
            mode,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 5., 5.), &b(10., 10., 5., 5.)), 0.0);
        // intersection 2, union 6
        assert!((iou(&b(0., 0., 2., 2.), &b(1., 0., 2., 2.)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_edges_are_disjoint() {
        assert_eq!(iou(&b(0., 0., 2., 2.), &b(2., 0., 2., 2.)), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0., 0., 0., 1.).is_err());
        assert!(BBox::new(0., 0., 1., -1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 1., 1.).is_err());
        let json = r#"{"x":0,"y":0,"w":0,"h":3}"#;
        assert!(serde_json::from_str::<BBox>(json).is_err());
    }

    #[test]
    fn center_is_exact() {
        assert_eq!(b(1.0, 2.0, 3.0, 5.0).center(), (2.5, 4.5));
    }

    #[test]
    fn score_out_of_range_rejected() {
        let bx = b(0., 0., 1., 1.);
        assert!(Detection::new(bx, 1.5, 0, DetectionMode::GlobalYolo).is_err());
        assert!(Detection::new(bx, -0.1, 0, DetectionMode::GlobalYolo).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
