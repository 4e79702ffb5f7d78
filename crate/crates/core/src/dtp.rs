//! Dilated text proposals: multi-level thresholding, rectangular closing and
//! connected-component bounding boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{BinaryImage, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtpConfig {
    /// Multiples of the image mean used as binarization thresholds.
    pub threshold_coeffs: Vec<f64>,
    /// Closing kernels as `(width, height)`; both odd.
    pub kernels: Vec<(usize, usize)>,
    pub min_box_area: usize,
    pub connectivity: Connectivity,
    /// Treat bright pixels as ink.
    pub invert: bool,
    /// Binarizations marking more than this fraction of the page as ink are
    /// skipped; they hold no word structure (a blank page at `c > 1`).
    pub max_ink_fraction: f64,
}

impl Default for DtpConfig {
    fn default() -> Self {
        Self {
            threshold_coeffs: vec![0.6, 0.8, 1.0, 1.2],
            kernels: vec![(5, 1), (9, 1), (15, 3), (21, 3), (31, 5)],
            min_box_area: 20,
            connectivity: Connectivity::Eight,
            invert: false,
            max_ink_fraction: 0.5,
        }
    }
}

impl DtpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_coeffs.is_empty() || self.kernels.is_empty() {
            return Err(Error::Config("dtp needs at least one threshold and one kernel".into()));
        }
        if let Some(c) = self.threshold_coeffs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Config(format!("dtp threshold coefficient {c} must be positive")));
        }
        if !(self.max_ink_fraction > 0.0 && self.max_ink_fraction <= 1.0) {
            return Err(Error::Config("dtp max_ink_fraction must lie in (0, 1]".into()));
        }
        if let Some(k) = self.kernels.iter().find(|(w, h)| *w == 0 || *h == 0 || w % 2 == 0 || h % 2 == 0) {
            return Err(Error::Config(format!("dtp kernel {k:?} must have odd positive dimensions")));
        }
        Ok(())
    }
}

/// One binary image per coefficient: ink is every pixel strictly below
/// `c * mean(img)`.
pub fn multi_threshold(img: &GrayImage, coeffs: &[f64]) -> Vec<BinaryImage> {
    let mean = img.mean();
    coeffs
        .iter()
        .map(|c| {
            let t = c * mean;
            let bits = img.pixels().iter().map(|&v| v < t).collect();
            BinaryImage::from_bits(img.width(), img.height(), bits).expect("same dimensions")
        })
        .collect()
}

/// Sliding-window count along rows (`horizontal`) or columns. A pixel is set
/// when the window `[i - (k-1)/2, i + k/2]` contains any foreground (`all ==
/// false`) or is entirely foreground and inside the image (`all == true`).
fn window_pass(src: &BinaryImage, k: usize, horizontal: bool, all: bool) -> BinaryImage {
    let (w, h) = (src.width(), src.height());
    if k <= 1 {
        return src.clone();
    }
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    let before = (k - 1) / 2;
    let after = k / 2;
    let mut out = BinaryImage::new(w, h);
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        let at = |i: usize| if horizontal { (i, line) } else { (line, i) };
        for i in 0..len {
            let (x, y) = at(i);
            prefix[i + 1] = prefix[i] + src.get(x, y) as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(len - 1);
            let count = prefix[hi + 1] - prefix[lo];
            let v = if all {
                i >= before && i + after < len && count == k
            } else {
                count > 0
            };
            if v {
                let (x, y) = at(i);
                out.set(x, y, true);
            }
        }
    }
    out
}

pub fn dilate(bin: &BinaryImage, kernel_w: usize, kernel_h: usize) -> BinaryImage {
    window_pass(&window_pass(bin, kernel_w, true, false), kernel_h, false, false)
}

pub fn erode(bin: &BinaryImage, kernel_w: usize, kernel_h: usize) -> BinaryImage {
    window_pass(&window_pass(bin, kernel_w, true, true), kernel_h, false, true)
}

/// Binary closing with a `kernel_w x kernel_h` rectangle. Pixels outside the
/// image count as background for both the dilation and the erosion.
pub fn morph_close(bin: &BinaryImage, kernel_w: usize, kernel_h: usize) -> BinaryImage {
    erode(&dilate(bin, kernel_w, kernel_h), kernel_w, kernel_h)
}

/// Tight bounding boxes of connected foreground components with at least
/// `min_area` pixels, in raster order of each component's first pixel.
pub fn connected_component_boxes(bin: &BinaryImage, connectivity: Connectivity, min_area: usize) -> Vec<BBox> {
    let (w, h) = (bin.width(), bin.height());
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut boxes = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    for start in 0..w * h {
        if seen[start] || !bin.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0;
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !seen[q] && bin.bits()[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        if area >= min_area {
            boxes.push(BBox::from_corners(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64));
        }
    }
    boxes
}

fn corner_key(b: &BBox) -> [i64; 4] {
    let [x0, y0, x1, y1] = b.corners();
    [y0.round() as i64, x0.round() as i64, y1.round() as i64, x1.round() as i64]
}

/// Union of component boxes over every (threshold, kernel) combination, with
/// exact duplicates removed, sorted by top-left corner. Binarizations that
/// are mostly ink are left out.
pub fn dtp_proposals(img: &GrayImage, cfg: &DtpConfig) -> Result<Vec<BBox>> {
    cfg.validate()?;
    let inverted;
    let src = if cfg.invert {
        inverted = GrayImage::new(img.width(), img.height(), img.pixels().iter().map(|v| 1.0 - v).collect())?;
        &inverted
    } else {
        img
    };
    let limit = cfg.max_ink_fraction * (img.width() * img.height()) as f64;
    let binaries: Vec<BinaryImage> = multi_threshold(src, &cfg.threshold_coeffs)
        .into_iter()
        .filter(|b| b.count() as f64 <= limit)
        .collect();
    let combos: Vec<(usize, (usize, usize))> = (0..binaries.len())
        .flat_map(|b| cfg.kernels.iter().map(move |&k| (b, k)))
        .collect();
    let mut keys: Vec<[i64; 4]> = combos
        .par_iter()
        .map(|&(b, (kw, kh))| {
            let closed = morph_close(&binaries[b], kw, kh);
            connected_component_boxes(&closed, cfg.connectivity, cfg.min_box_area)
        })
        .flatten_iter()
        .map(|b| corner_key(&b))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    Ok(keys
        .into_iter()
        .map(|[y0, x0, y1, x1]| BBox::from_corners(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin_from(rows: &[&str]) -> BinaryImage {
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryImage::from_bits(w, rows.len(), bits).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let img = GrayImage::filled(3, 3, 0.4);
        assert_eq!(multi_threshold(&img, &[1.0])[0].count(), 0);

        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = &multi_threshold(&img, &[1.0])[0];
        assert_eq!(b.bits(), &[true, false, false, false]);

        let img = GrayImage::new(4, 1, vec![0.1, 0.3, 0.6, 0.9]).unwrap();
        let bs = multi_threshold(&img, &[0.5, 1.0]);
        assert_eq!(bs.len(), 2);
        for (a, b) in bs[0].bits().iter().zip(bs[1].bits()) {
            assert!(!a || *b);
        }
    }

    #[test]
    fn closing_examples() {
        let x = bin_from(&["#..#.", ".##..", "....#"]);
        assert_eq!(morph_close(&x, 1, 1), x);

        // outside pixels are background for the erosion too, so the border
        // pixels themselves are eroded away
        let gap = bin_from(&["#.#"]);
        assert!(morph_close(&gap, 3, 1).get(1, 0));
        assert_eq!(morph_close(&gap, 3, 1), bin_from(&[".#."]));

        let y = bin_from(&[".......", ".#.#...", "...#.#.", "......."]);
        let once = morph_close(&y, 3, 3);
        assert_eq!(morph_close(&once, 3, 3), once);
    }

    #[test]
    fn closing_bridges_interior_gap() {
        let x = bin_from(&["..........", "..#...#...", ".........."]);
        let c = morph_close(&x, 5, 1);
        assert_eq!(c, bin_from(&["..........", "..#####...", ".........."]));
    }

    #[test]
    fn component_examples() {
        assert!(connected_component_boxes(&BinaryImage::new(4, 4), Connectivity::Eight, 1).is_empty());

        let r = bin_from(&[".....", ".###.", ".###.", "....."]);
        let b = connected_component_boxes(&r, Connectivity::Four, 1);
        assert_eq!(b, vec![BBox::new(2.5, 2.0, 3.0, 2.0)]);

        let d = bin_from(&["#.", ".#"]);
        assert_eq!(connected_component_boxes(&d, Connectivity::Eight, 1).len(), 1);
        assert_eq!(connected_component_boxes(&d, Connectivity::Four, 1).len(), 2);
        assert!(connected_component_boxes(&d, Connectivity::Four, 2).is_empty());
    }

    #[test]
    fn blank_page_has_no_proposals() {
        let img = GrayImage::filled(40, 30, 0.9);
        assert!(dtp_proposals(&img, &DtpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(DtpConfig::default().validate().is_ok());
        let bad = DtpConfig { kernels: vec![(4, 1)], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DtpConfig { threshold_coeffs: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DtpConfig { threshold_coeffs: vec![-1.0], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invert_flag_handles_light_ink() {
        let mut px = vec![0.1; 20 * 10];
        for y in 3..7 {
            for x in 4..14 {
                px[y * 20 + x] = 0.95;
            }
        }
        let img = GrayImage::new(20, 10, px).unwrap();
        let cfg = DtpConfig { invert: true, kernels: vec![(1, 1)], threshold_coeffs: vec![1.0], ..Default::default() };
        let boxes = dtp_proposals(&img, &cfg).unwrap();
        assert_eq!(boxes, vec![BBox::from_corners(4.0, 3.0, 14.0, 7.0)]);
    }
}
