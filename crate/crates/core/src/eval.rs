//! Precision, recall, F1 and all-point interpolated AP at a fixed IOU
//! threshold.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

/// Outcome for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub frame: usize,
    pub score: f64,
    pub true_positive: bool,
    /// IOU with the matched ground truth, or the best IOU seen for a false positive.
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub iou_threshold: f64,
    pub matches: Vec<MatchRecord>,
    pub pr_curve: Vec<PrPoint>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy per-frame matching followed by pooled AP. `preds[i]` and `gts[i]`
/// both describe frame `i`.
pub fn evaluate(preds: &[Vec<ScoredBox>], gts: &[Vec<BBox>], iou_t: f64) -> Result<EvalReport> {
    if !(iou_t > 0.0 && iou_t <= 1.0) {
        return Err(Error::Param(format!("IOU threshold {iou_t} outside (0, 1]")));
    }
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "predictions cover {} frames but ground truth covers {}",
            preds.len(),
            gts.len()
        )));
    }
    let mut matches = Vec::new();
    for (frame, (p, g)) in preds.iter().zip(gts).enumerate() {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].score.total_cmp(&p[a].score));
        let mut taken = vec![false; g.len()];
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            let mut best_any = 0.0f64;
            for (j, gt) in g.iter().enumerate() {
                let v = iou(&p[i].bbox, gt);
                best_any = best_any.max(v);
                if !taken[j] && v >= iou_t && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            let rec = match best {
                Some((j, v)) => {
                    taken[j] = true;
                    MatchRecord {
                        frame,
                        score: p[i].score,
                        true_positive: true,
                        iou: v,
                    }
                }
                None => MatchRecord {
                    frame,
                    score: p[i].score,
                    true_positive: false,
                    iou: best_any,
                },
            };
            matches.push(rec);
        }
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let tp = matches.iter().filter(|m| m.true_positive).count();
    let fp = matches.len() - tp;
    let fn_ = n_gt - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, n_gt);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    let mut ranked = matches.clone();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut pr_curve = Vec::with_capacity(ranked.len());
    let (mut ctp, mut cfp) = (0usize, 0usize);
    for m in &ranked {
        if m.true_positive {
            ctp += 1;
        } else {
            cfp += 1;
        }
        pr_curve.push(PrPoint {
            score: m.score,
            precision: ratio(ctp, ctp + cfp),
            recall: ratio(ctp, n_gt),
        });
    }
    let ap = average_precision(&pr_curve);

    Ok(EvalReport {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
        ap,
        iou_threshold: iou_t,
        matches,
        pr_curve,
    })
}

/// Area under the monotone precision envelope of a score-ranked PR curve.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut env: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, e) in curve.iter().zip(&env) {
        if p.recall > prev_r {
            ap += (p.recall - prev_r) * e;
            prev_r = p.recall;
        }
    }
    ap
}

impl EvalReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iou_threshold: {}", self.iou_threshold);
        let _ = writeln!(s, "tp: {}", self.tp);
        let _ = writeln!(s, "fp: {}", self.fp);
        let _ = writeln!(s, "fn: {}", self.fn_);
        let _ = writeln!(s, "precision: {:.6}", self.precision);
        let _ = writeln!(s, "recall: {:.6}", self.recall);
        let _ = writeln!(s, "f1: {:.6}", self.f1);
        let _ = writeln!(s, "ap: {:.6}", self.ap);
        s
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("score,precision,recall\n");
        for p in &self.pr_curve {
            let _ = writeln!(s, "{},{},{}", p.score, p.precision, p.recall);
        }
        s
    }
}
