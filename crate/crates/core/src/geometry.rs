//! Box algebra: overlap, non-maximum suppression, anchor-relative box
//! encoding and the smooth-L1 regression loss.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned region in center form, in pixel (or feature-map) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(xc: f64, yc: f64, w: f64, h: f64) -> Self {
        Self { xc, yc, w, h }
    }

    /// Builds a box from corner coordinates `(x0, y0, x1, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            xc: 0.5 * (x0 + x1),
            yc: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn corners(&self) -> [f64; 4] {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        [self.xc - hw, self.yc - hh, self.xc + hw, self.yc + hh]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.xc.is_finite() && self.yc.is_finite()
            && self.w.is_finite() && self.h.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::DegenerateBox(format!("{self:?}")))
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.xc + dx, self.yc + dy, self.w, self.h)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.xc * s, self.yc * s, self.w * s, self.h * s)
    }

    /// Intersection with the rectangle `[0, width] x [0, height]`, if any area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let [x0, y0, x1, y1] = self.corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(width), y1.min(height));
        (x1 > x0 && y1 > y0).then(|| Self::from_corners(x0, y0, x1, y1))
    }

    /// True if the box lies within `[0, width] x [0, height]`.
    pub fn inside(&self, width: f64, height: f64) -> bool {
        let [x0, y0, x1, y1] = self.corners();
        x0 >= 0.0 && y0 >= 0.0 && x1 <= width && y1 <= height
    }
}

/// Regression target relative to an anchor: normalized center offsets and
/// log-space size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { tx: a[0], ty: a[1], tw: a[2], th: a[3] }
    }
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    iw * ih
}

/// Intersection over union. Boxes that only share an edge have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Descending-score order with ties broken by lower index.
pub(crate) fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Greedy non-maximum suppression.
///
/// Returns kept indices in descending score order. A box is suppressed when
/// its IoU with an already kept box exceeds `overlap_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], overlap_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::DimensionMismatch { expected: boxes.len(), got: scores.len() });
    }
    if !(0.0..=1.0).contains(&overlap_threshold) {
        return Err(Error::invalid(format!("overlap threshold {overlap_threshold} not in [0,1]")));
    }
    let mut keep: Vec<usize> = Vec::new();
    for i in score_order(scores) {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= overlap_threshold) {
            keep.push(i);
        }
    }
    Ok(keep)
}

pub fn encode_delta(anchor: &BBox, target: &BBox) -> BoxDelta {
    BoxDelta {
        tx: (target.xc - anchor.xc) / anchor.w,
        ty: (target.yc - anchor.yc) / anchor.h,
        tw: (target.w / anchor.w).ln(),
        th: (target.h / anchor.h).ln(),
    }
}

pub fn decode_delta(anchor: &BBox, delta: &BoxDelta) -> BBox {
    BBox {
        xc: anchor.xc + delta.tx * anchor.w,
        yc: anchor.yc + delta.ty * anchor.h,
        w: anchor.w * delta.tw.exp(),
        h: anchor.h * delta.th.exp(),
    }
}

/// Smooth-L1 loss of prediction `x` against target `t`, with `d loss / d x`.
///
/// At `|x - t| == 1` the gradient follows the quadratic branch.
pub fn smooth_l1(x: f64, t: f64) -> (f64, f64) {
    let z = x - t;
    if z.abs() <= 1.0 {
        let loss = if z.abs() < 1.0 { 0.5 * z * z } else { 0.5 };
        (loss, z)
    } else {
        (z.abs() - 0.5, z.signum())
    }
}
