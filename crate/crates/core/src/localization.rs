//! Region-proposal math: anchor grids, IoU target assignment, minibatch
//! sampling, and bilinear ROI pooling with its analytic adjoint.

use ndarray::Array3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_delta, iou, BBox, BoxDelta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorGrid {
    /// Feature-map cell size in image pixels.
    pub stride: usize,
    /// Anchor side lengths (square root of the area) in image pixels.
    pub scales: Vec<f64>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
}

impl Default for AnchorGrid {
    fn default() -> Self {
        Self {
            stride: 8,
            scales: vec![24.0, 40.0, 64.0, 104.0, 168.0],
            aspect_ratios: vec![2.0, 4.0, 7.0],
        }
    }
}

impl AnchorGrid {
    /// Anchors per feature-map cell.
    pub fn k(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.k() == 0 {
            return Err(Error::Config("anchor grid needs a stride, scales and ratios".into()));
        }
        if self.scales.iter().chain(&self.aspect_ratios).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("anchor scales and ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Anchors for a `feat_w x feat_h` map in row-major cell order, scale-major
/// within each cell. Coordinates are image pixels and may exceed the image.
pub fn generate_anchors(feat_w: usize, feat_h: usize, grid: &AnchorGrid) -> Vec<BBox> {
    let stride = grid.stride as f64;
    let mut out = Vec::with_capacity(feat_w * feat_h * grid.k());
    for j in 0..feat_h {
        for i in 0..feat_w {
            let (xc, yc) = ((i as f64 + 0.5) * stride, (j as f64 + 0.5) * stride);
            for &s in &grid.scales {
                for &r in &grid.aspect_ratios {
                    let sr = r.sqrt();
                    out.push(BBox::new(xc, yc, s * sr, s / sr));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorLabel {
    Positive { gt: usize, target: BoxDelta },
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub labels: Vec<AnchorLabel>,
}

impl TargetAssignment {
    pub fn positives(&self) -> Vec<usize> {
        self.indices(|l| matches!(l, AnchorLabel::Positive { .. }))
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.indices(|l| matches!(l, AnchorLabel::Negative))
    }

    fn indices(&self, pred: impl Fn(&AnchorLabel) -> bool) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| pred(l)).map(|(i, _)| i).collect()
    }
}

/// Labels each anchor by its best ground-truth IoU: positive above `pos_thr`,
/// negative below `neg_thr`, ignored in between. A ground truth left without
/// positives claims its best overlapping anchor that no other ground truth
/// depends on.
pub fn assign_targets(anchors: &[BBox], gt: &[BBox], pos_thr: f64, neg_thr: f64) -> Result<TargetAssignment> {
    if !(0.0 < neg_thr && neg_thr < pos_thr && pos_thr < 1.0) {
        return Err(Error::invalid(format!("need 0 < neg_thr ({neg_thr}) < pos_thr ({pos_thr}) < 1")));
    }
    let overlaps: Vec<Vec<f64>> = anchors.iter().map(|a| gt.iter().map(|g| iou(a, g)).collect()).collect();
    let mut best_gt: Vec<(usize, f64)> = vec![(0, 0.0); anchors.len()];
    for (a, row) in overlaps.iter().enumerate() {
        for (g, &o) in row.iter().enumerate() {
            if o > best_gt[a].1 {
                best_gt[a] = (g, o);
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = best_gt
        .iter()
        .enumerate()
        .map(|(a, &(g, o))| {
            if o > pos_thr {
                AnchorLabel::Positive { gt: g, target: encode_delta(&anchors[a], &gt[g]) }
            } else if o < neg_thr {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    let mut held = vec![0usize; gt.len()];
    for l in &labels {
        if let AnchorLabel::Positive { gt: g, .. } = l {
            held[*g] += 1;
        }
    }
    for g in 0..gt.len() {
        if held[g] > 0 {
            continue;
        }
        // Best overlapping anchor that is free or whose owner keeps another positive.
        let pick = (0..anchors.len())
            .filter(|&a| overlaps[a][g] > 0.0)
            .filter(|&a| match labels[a] {
                AnchorLabel::Positive { gt: owner, .. } => held[owner] > 1,
                _ => true,
            })
            .max_by(|&a, &b| overlaps[a][g].total_cmp(&overlaps[b][g]).then(b.cmp(&a)));
        if let Some(a) = pick {
            if let AnchorLabel::Positive { gt: owner, .. } = labels[a] {
                held[owner] -= 1;
            }
            labels[a] = AnchorLabel::Positive { gt: g, target: encode_delta(&anchors[a], &gt[g]) };
            held[g] = 1;
        }
    }
    Ok(TargetAssignment { labels })
}

/// Samples up to `n_pos` positives and `n_neg` negatives without replacement.
pub fn sample_minibatch(assign: &TargetAssignment, n_pos: usize, n_neg: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool: Vec<usize>, n: usize| -> Vec<usize> {
        if pool.len() <= n {
            return pool;
        }
        index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    };
    let pos = pick(assign.positives(), n_pos);
    let neg = pick(assign.negatives(), n_neg);
    (pos, neg)
}

/// Dense `channels x height x width` feature map. Texel `(i, j)` has its
/// center at continuous coordinate `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// Bilinear tap positions and weights for one sample point.
struct Taps {
    i0: isize,
    j0: isize,
    fu: f64,
    fv: f64,
}

impl Taps {
    fn at(x: f64, y: f64) -> Self {
        let (u, v) = (x - 0.5, y - 0.5);
        let (u0, v0) = (u.floor(), v.floor());
        Taps { i0: u0 as isize, j0: v0 as isize, fu: u - u0, fv: v - v0 }
    }

    /// `(di, dj, weight)` for the four corners.
    fn corners(&self) -> [(isize, isize, f64); 4] {
        let (fu, fv) = (self.fu, self.fv);
        [
            (0, 0, (1.0 - fu) * (1.0 - fv)),
            (1, 0, fu * (1.0 - fv)),
            (0, 1, (1.0 - fu) * fv),
            (1, 1, fu * fv),
        ]
    }
}

fn texel(fm: &Array3<f64>, c: usize, i: isize, j: isize) -> f64 {
    let (_, h, w) = fm.dim();
    if i < 0 || j < 0 || i >= w as isize || j >= h as isize {
        0.0
    } else {
        fm[[c, j as usize, i as usize]]
    }
}

/// Sampling grid of a box: cell-center coordinates plus their relative
/// offsets `(c + 0.5) / out - 0.5` used for the size derivatives.
struct Grid {
    xs: Vec<(f64, f64)>,
    ys: Vec<(f64, f64)>,
}

fn sampling_grid(fm: &FeatureMap, bbox: &BBox, out_h: usize, out_w: usize) -> Result<Grid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("roi pooling output must be at least 1x1"));
    }
    if !bbox.is_valid() || bbox.clip(fm.width() as f64, fm.height() as f64).is_none() {
        return Err(Error::DegenerateBox(format!("{bbox:?} has no area inside the feature map")));
    }
    let rel = |k: usize, n: usize| (k as f64 + 0.5) / n as f64 - 0.5;
    Ok(Grid {
        xs: (0..out_w).map(|c| { let a = rel(c, out_w); (bbox.xc + bbox.w * a, a) }).collect(),
        ys: (0..out_h).map(|r| { let a = rel(r, out_h); (bbox.yc + bbox.h * a, a) }).collect(),
    })
}

/// Samples each output cell at its center with bilinear interpolation.
/// The box is in feature-map coordinates; taps outside the map read 0.
pub fn roi_pool_bilinear(fm: &FeatureMap, bbox: &BBox, out_h: usize, out_w: usize) -> Result<Array3<f64>> {
    let grid = sampling_grid(fm, bbox, out_h, out_w)?;
    let mut out = Array3::zeros((fm.channels(), out_h, out_w));
    for (r, &(y, _)) in grid.ys.iter().enumerate() {
        for (c, &(x, _)) in grid.xs.iter().enumerate() {
            let t = Taps::at(x, y);
            for ch in 0..fm.channels() {
                out[[ch, r, c]] = t
                    .corners()
                    .iter()
                    .map(|&(di, dj, wt)| wt * texel(&fm.data, ch, t.i0 + di, t.j0 + dj))
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Partial derivatives of the bilinear sample with respect to x and y.
fn sample_slopes(fm: &Array3<f64>, ch: usize, t: &Taps) -> (f64, f64) {
    let v00 = texel(fm, ch, t.i0, t.j0);
    let v10 = texel(fm, ch, t.i0 + 1, t.j0);
    let v01 = texel(fm, ch, t.i0, t.j0 + 1);
    let v11 = texel(fm, ch, t.i0 + 1, t.j0 + 1);
    let dx = (1.0 - t.fv) * (v10 - v00) + t.fv * (v11 - v01);
    let dy = (1.0 - t.fu) * (v01 - v00) + t.fu * (v11 - v10);
    (dx, dy)
}

/// Gradient of a box, ordered `(xc, yc, w, h)`.
pub type BoxGrad = [f64; 4];

/// Adjoint of [`roi_pool_bilinear`]: pulls `out_grad` back onto the feature
/// map and the box coordinates.
pub fn roi_pool_backward(fm: &FeatureMap, bbox: &BBox, out_grad: &Array3<f64>) -> Result<(Array3<f64>, BoxGrad)> {
    let (ch_n, out_h, out_w) = out_grad.dim();
    if ch_n != fm.channels() {
        return Err(Error::DimensionMismatch { expected: fm.channels(), got: ch_n });
    }
    let grid = sampling_grid(fm, bbox, out_h, out_w)?;
    let (_, h, w) = fm.data.dim();
    let mut fm_grad = Array3::zeros(fm.data.dim());
    let mut box_grad = [0.0; 4];
    for (r, &(y, ay)) in grid.ys.iter().enumerate() {
        for (c, &(x, ax)) in grid.xs.iter().enumerate() {
            let t = Taps::at(x, y);
            for ch in 0..ch_n {
                let g = out_grad[[ch, r, c]];
                if g == 0.0 {
                    continue;
                }
                for (di, dj, wt) in t.corners() {
                    let (i, j) = (t.i0 + di, t.j0 + dj);
                    if i >= 0 && j >= 0 && i < w as isize && j < h as isize {
                        fm_grad[[ch, j as usize, i as usize]] += g * wt;
                    }
                }
                let (dx, dy) = sample_slopes(&fm.data, ch, &t);
                box_grad[0] += g * dx;
                box_grad[1] += g * dy;
                box_grad[2] += g * dx * ax;
                box_grad[3] += g * dy * ay;
            }
        }
    }
    Ok((fm_grad, box_grad))
}

/// Forward-mode derivative of [`roi_pool_bilinear`] along `(dfm, dbox)`.
pub fn roi_pool_jvp(
    fm: &FeatureMap,
    bbox: &BBox,
    dfm: &Array3<f64>,
    dbox: BoxGrad,
    out_h: usize,
    out_w: usize,
) -> Result<Array3<f64>> {
    if dfm.dim() != fm.data.dim() {
        return Err(Error::invalid("tangent feature map shape differs from the feature map"));
    }
    let grid = sampling_grid(fm, bbox, out_h, out_w)?;
    let mut out = Array3::zeros((fm.channels(), out_h, out_w));
    for (r, &(y, ay)) in grid.ys.iter().enumerate() {
        for (c, &(x, ax)) in grid.xs.iter().enumerate() {
            let t = Taps::at(x, y);
            let (vx, vy) = (dbox[0] + ax * dbox[2], dbox[1] + ay * dbox[3]);
            for ch in 0..fm.channels() {
                let lin: f64 = t
                    .corners()
                    .iter()
                    .map(|&(di, dj, wt)| wt * texel(dfm, ch, t.i0 + di, t.j0 + dj))
                    .sum();
                let (dx, dy) = sample_slopes(&fm.data, ch, &t);
                out[[ch, r, c]] = lin + dx * vx + dy * vy;
            }
        }
    }
    Ok(out)
}
