//! Operating-point selection and mask post-processing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterGrid;

/// Largest number of candidate thresholds evaluated before falling back to quantiles.
pub const DEFAULT_CANDIDATE_CAP: usize = 4096;

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when the denominator vanishes.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub beta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub f1: f64,
    pub iou: f64,
}

impl ThresholdResult {
    fn from_counts(threshold: f64, beta: f64, tp: u64, fp: u64, positives: u64) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / positives as f64;
        let fn_ = positives - tp;
        let iou = if tp + fp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp + fn_) as f64
        };
        Self {
            threshold,
            beta,
            precision,
            recall,
            f_beta: fbeta(precision, recall, beta),
            f1: fbeta(precision, recall, 1.0),
            iou,
        }
    }
}

/// Maximizes F-beta over candidate thresholds drawn from the observed scores,
/// with the default candidate cap.
pub fn sweep_thresholds(scores: &[(f32, bool)], beta: f64) -> Result<ThresholdResult> {
    sweep_thresholds_capped(scores, beta, Some(DEFAULT_CANDIDATE_CAP))
}

/// Maximizes F-beta with predicted-positive ⇔ `score >= threshold`.
///
/// Every unique score is a candidate unless there are more than `cap` of
/// them, in which case `cap` evenly spaced quantiles of the unique values
/// are used. `cap = None` always sweeps exhaustively. Ties resolve to the
/// higher threshold.
pub fn sweep_thresholds_capped(scores: &[(f32, bool)], beta: f64, cap: Option<usize>) -> Result<ThresholdResult> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let positives = scores.iter().filter(|(_, l)| *l).count() as u64;
    if positives == 0 {
        return Err(Error::InsufficientData("threshold sweep needs at least one positive label".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    // cumulative (tp, fp) after admitting each unique score, highest first
    let mut levels: Vec<(f32, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(s, label)) in sorted.iter().enumerate() {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == sorted.len() || sorted[i + 1].0 != s {
            levels.push((s, tp, fp));
        }
    }

    let candidates: Vec<usize> = match cap {
        Some(cap) if levels.len() > cap && cap >= 2 => {
            let last = levels.len() - 1;
            let mut idx: Vec<usize> = (0..cap)
                .map(|i| ((i as f64) * last as f64 / (cap - 1) as f64).round() as usize)
                .collect();
            idx.dedup();
            idx
        }
        _ => (0..levels.len()).collect(),
    };

    let mut best: Option<ThresholdResult> = None;
    for i in candidates {
        let (s, tp, fp) = levels[i];
        let r = ThresholdResult::from_counts(s as f64, beta, tp, fp, positives);
        if best.map_or(true, |b| r.f_beta > b.f_beta) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one candidate level"))
}

/// 1 where `value >= threshold`, else 0.
pub fn binarize(grid: &RasterGrid, threshold: f64) -> RasterGrid {
    let mut out = grid.clone().with_nodata(None);
    for v in out.data_mut() {
        *v = if (*v as f64) >= threshold { 1.0 } else { 0.0 };
    }
    out
}

fn neighborhood(src: &[bool], w: usize, h: usize, want_any: bool) -> Vec<bool> {
    let mut out = vec![false; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let mut any = false;
            let mut all = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    let v = rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 && src[rr as usize * w + cc as usize];
                    any |= v;
                    all &= v;
                }
            }
            *o = if want_any { any } else { all };
        }
    });
    out
}

/// Binary dilation with a full 3×3 structuring element, zero outside the grid.
pub fn dilate(mask: &RasterGrid) -> RasterGrid {
    morph_channels(mask, |m, w, h| neighborhood(m, w, h, true))
}

/// Binary erosion with a full 3×3 structuring element, zero outside the grid.
pub fn erode(mask: &RasterGrid) -> RasterGrid {
    morph_channels(mask, |m, w, h| neighborhood(m, w, h, false))
}

/// One iteration of dilation followed by erosion with a 3×3 square.
///
/// The mask is treated as embedded in an all-zero plane: the grid is padded
/// by one zero pixel, closed, and cropped back, so the result is extensive
/// and idempotent right up to the border.
pub fn morph_close(mask: &RasterGrid) -> RasterGrid {
    morph_channels(mask, |m, w, h| {
        let (pw, ph) = (w + 2, h + 2);
        let mut padded = vec![false; pw * ph];
        for r in 0..h {
            padded[(r + 1) * pw + 1..(r + 1) * pw + 1 + w].copy_from_slice(&m[r * w..(r + 1) * w]);
        }
        let closed = neighborhood(&neighborhood(&padded, pw, ph, true), pw, ph, false);
        let mut out = vec![false; w * h];
        for r in 0..h {
            out[r * w..(r + 1) * w].copy_from_slice(&closed[(r + 1) * pw + 1..(r + 1) * pw + 1 + w]);
        }
        out
    })
}

fn morph_channels(mask: &RasterGrid, op: impl Fn(&[bool], usize, usize) -> Vec<bool>) -> RasterGrid {
    let (w, h) = (mask.width(), mask.height());
    let mut out = mask.clone().with_nodata(None);
    for c in 0..mask.channels() {
        let bits: Vec<bool> = mask.channel(c).iter().map(|&v| v >= 0.5).collect();
        let res = op(&bits, w, h);
        for (o, b) in out.channel_mut(c).iter_mut().zip(res) {
            *o = if b { 1.0 } else { 0.0 };
        }
    }
    out
}
