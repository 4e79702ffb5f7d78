//! A small stroke font for rendering synthetic handwriting-like word images.
//!
//! Glyphs are polylines on a grid where `y = 0` is the ascender line,
//! `y = 2` the x-height, `y = 5` the baseline and `y = 7` the descender line.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::GrayImage;

type Stroke = &'static [(f64, f64)];

struct Glyph {
    width: f64,
    strokes: &'static [Stroke],
}

const fn g(width: f64, strokes: &'static [Stroke]) -> Glyph {
    Glyph { width, strokes }
}

fn glyph(c: char) -> Option<Glyph> {
    Some(match c {
        '0' => g(2.0, &[&[(0.5, 0.0), (1.5, 0.0), (2.0, 0.5), (2.0, 4.5), (1.5, 5.0), (0.5, 5.0), (0.0, 4.5), (0.0, 0.5), (0.5, 0.0)]]),
        '1' => g(1.7, &[&[(0.4, 1.0), (1.0, 0.0), (1.0, 5.0)], &[(0.3, 5.0), (1.7, 5.0)]]),
        '2' => g(2.0, &[&[(0.0, 1.0), (0.5, 0.0), (1.5, 0.0), (2.0, 1.0), (2.0, 1.8), (0.0, 5.0), (2.0, 5.0)]]),
        '3' => g(2.0, &[
            &[(0.0, 0.5), (0.5, 0.0), (1.5, 0.0), (2.0, 0.5), (2.0, 2.0), (1.5, 2.5), (0.7, 2.5)],
            &[(1.5, 2.5), (2.0, 3.0), (2.0, 4.5), (1.5, 5.0), (0.5, 5.0), (0.0, 4.5)],
        ]),
        '4' => g(2.2, &[&[(1.5, 5.0), (1.5, 0.0), (0.0, 3.5), (2.2, 3.5)]]),
        '5' => g(2.0, &[&[(2.0, 0.0), (0.0, 0.0), (0.0, 2.2), (1.5, 2.2), (2.0, 2.7), (2.0, 4.5), (1.5, 5.0), (0.0, 5.0)]]),
        '6' => g(2.0, &[&[(1.8, 0.0), (0.5, 0.0), (0.0, 0.8), (0.0, 4.5), (0.5, 5.0), (1.5, 5.0), (2.0, 4.5), (2.0, 3.0), (1.5, 2.5), (0.0, 2.5)]]),
        '7' => g(2.0, &[&[(0.0, 0.0), (2.0, 0.0), (0.7, 5.0)]]),
        '8' => g(2.0, &[&[
            (0.5, 2.5), (0.0, 2.0), (0.0, 0.5), (0.5, 0.0), (1.5, 0.0), (2.0, 0.5), (2.0, 2.0), (1.5, 2.5), (0.5, 2.5),
            (0.0, 3.0), (0.0, 4.5), (0.5, 5.0), (1.5, 5.0), (2.0, 4.5), (2.0, 3.0), (1.5, 2.5),
        ]]),
        '9' => g(2.0, &[&[(2.0, 2.5), (0.5, 2.5), (0.0, 2.0), (0.0, 0.5), (0.5, 0.0), (1.5, 0.0), (2.0, 0.5), (2.0, 4.2), (1.5, 5.0), (0.2, 5.0)]]),
        'a' => g(2.0, &[
            &[(0.2, 2.0), (1.5, 2.0), (2.0, 2.5), (2.0, 5.0)],
            &[(2.0, 3.3), (0.5, 3.3), (0.0, 3.8), (0.0, 4.5), (0.5, 5.0), (2.0, 5.0)],
        ]),
        'b' => g(2.0, &[&[(0.0, 0.0), (0.0, 5.0), (1.5, 5.0), (2.0, 4.5), (2.0, 2.5), (1.5, 2.0), (0.0, 2.0)]]),
        'c' => g(2.0, &[&[(2.0, 2.0), (0.5, 2.0), (0.0, 2.5), (0.0, 4.5), (0.5, 5.0), (2.0, 5.0)]]),
        'd' => g(2.0, &[&[(2.0, 0.0), (2.0, 5.0), (0.5, 5.0), (0.0, 4.5), (0.0, 2.5), (0.5, 2.0), (2.0, 2.0)]]),
        'e' => g(2.0, &[&[(0.0, 3.5), (2.0, 3.5), (2.0, 2.5), (1.5, 2.0), (0.5, 2.0), (0.0, 2.5), (0.0, 4.5), (0.5, 5.0), (2.0, 5.0)]]),
        'f' => g(1.8, &[&[(1.8, 0.0), (1.0, 0.0), (0.5, 0.5), (0.5, 5.0)], &[(0.0, 2.0), (1.5, 2.0)]]),
        'g' => g(2.0, &[
            &[(2.0, 2.0), (2.0, 6.5), (1.5, 7.0), (0.2, 7.0)],
            &[(2.0, 2.0), (0.5, 2.0), (0.0, 2.5), (0.0, 4.5), (0.5, 5.0), (2.0, 5.0)],
        ]),
        'h' => g(2.0, &[&[(0.0, 0.0), (0.0, 5.0)], &[(0.0, 2.5), (0.5, 2.0), (1.5, 2.0), (2.0, 2.5), (2.0, 5.0)]]),
        'i' => g(1.0, &[&[(0.5, 2.0), (0.5, 5.0)], &[(0.5, 0.6), (0.5, 1.0)]]),
        'j' => g(1.3, &[&[(1.0, 2.0), (1.0, 6.5), (0.5, 7.0), (0.0, 7.0)], &[(1.0, 0.6), (1.0, 1.0)]]),
        'k' => g(2.0, &[&[(0.0, 0.0), (0.0, 5.0)], &[(1.8, 2.0), (0.0, 3.6)], &[(0.6, 3.1), (2.0, 5.0)]]),
        'l' => g(1.0, &[&[(0.5, 0.0), (0.5, 5.0)]]),
        'm' => g(3.0, &[
            &[(0.0, 2.0), (0.0, 5.0)],
            &[(0.0, 2.5), (0.5, 2.0), (1.0, 2.0), (1.5, 2.5), (1.5, 5.0)],
            &[(1.5, 2.5), (2.0, 2.0), (2.5, 2.0), (3.0, 2.5), (3.0, 5.0)],
        ]),
        'n' => g(2.0, &[&[(0.0, 2.0), (0.0, 5.0)], &[(0.0, 2.5), (0.5, 2.0), (1.5, 2.0), (2.0, 2.5), (2.0, 5.0)]]),
        'o' => g(2.0, &[&[(0.5, 2.0), (1.5, 2.0), (2.0, 2.5), (2.0, 4.5), (1.5, 5.0), (0.5, 5.0), (0.0, 4.5), (0.0, 2.5), (0.5, 2.0)]]),
        'p' => g(2.0, &[&[(0.0, 2.0), (0.0, 7.0)], &[(0.0, 2.0), (1.5, 2.0), (2.0, 2.5), (2.0, 4.5), (1.5, 5.0), (0.0, 5.0)]]),
        'q' => g(2.0, &[&[(2.0, 2.0), (2.0, 7.0)], &[(2.0, 2.0), (0.5, 2.0), (0.0, 2.5), (0.0, 4.5), (0.5, 5.0), (2.0, 5.0)]]),
        'r' => g(1.8, &[&[(0.0, 2.0), (0.0, 5.0)], &[(0.0, 3.0), (1.0, 2.0), (1.8, 2.0)]]),
        's' => g(2.0, &[&[(2.0, 2.0), (0.5, 2.0), (0.0, 2.5), (0.0, 3.0), (0.5, 3.5), (1.5, 3.5), (2.0, 4.0), (2.0, 4.5), (1.5, 5.0), (0.0, 5.0)]]),
        't' => g(1.8, &[&[(0.7, 0.7), (0.7, 4.5), (1.2, 5.0), (1.8, 5.0)], &[(0.0, 2.0), (1.6, 2.0)]]),
        'u' => g(2.0, &[&[(0.0, 2.0), (0.0, 4.5), (0.5, 5.0), (1.5, 5.0), (2.0, 4.5)], &[(2.0, 2.0), (2.0, 5.0)]]),
        'v' => g(2.0, &[&[(0.0, 2.0), (1.0, 5.0), (2.0, 2.0)]]),
        'w' => g(3.0, &[&[(0.0, 2.0), (0.7, 5.0), (1.5, 2.8), (2.3, 5.0), (3.0, 2.0)]]),
        'x' => g(2.0, &[&[(0.0, 2.0), (2.0, 5.0)], &[(2.0, 2.0), (0.0, 5.0)]]),
        'y' => g(2.0, &[&[(0.0, 2.0), (1.0, 5.0)], &[(2.0, 2.0), (0.8, 6.3), (0.3, 7.0)]]),
        'z' => g(2.0, &[&[(0.0, 2.0), (2.0, 2.0), (0.0, 5.0), (2.0, 5.0)]]),
        _ => return None,
    })
}

/// Rendering parameters of one word instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphStyle {
    /// Pixels per grid unit.
    pub unit: f64,
    /// Pen width in pixels.
    pub stroke: f64,
    /// Gap between glyphs in grid units.
    pub spacing: f64,
    /// Horizontal offset per unit of height (italic slant).
    pub slant: f64,
    /// Random displacement of control points in grid units.
    pub jitter: f64,
    pub ink: f64,
    pub paper: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self { unit: 3.2, stroke: 2.0, spacing: 1.4, slant: 0.0, jitter: 0.0, ink: 0.15, paper: 0.9 }
    }
}

impl GlyphStyle {
    /// A random writer style within legible bounds.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            unit: rng.random_range(2.8..3.6),
            stroke: rng.random_range(2.0..3.0),
            spacing: rng.random_range(1.1..1.7),
            slant: rng.random_range(-0.2..0.2),
            jitter: rng.random_range(0.05..0.15),
            ink: rng.random_range(0.08..0.22),
            paper: rng.random_range(0.86..0.94),
        }
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Renders `word` (characters `0-9a-z`) as dark strokes on a light
/// background with a few pixels of padding around the ink.
pub fn render_word(word: &str, style: &GlyphStyle, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    if word.is_empty() {
        return Err(Error::invalid("cannot render an empty word"));
    }
    let glyphs = word
        .chars()
        .map(|c| glyph(c).ok_or_else(|| Error::invalid(format!("no glyph for {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let pad = style.stroke + 2.0;
    let u = style.unit;
    let skew = style.slant.abs() * 7.0 * u;
    let mut segments = Vec::new();
    let mut pen = 0.0;
    for gl in &glyphs {
        let dy = rng.random_range(-0.15..=0.15);
        for stroke in gl.strokes {
            let pts: Vec<(f64, f64)> = stroke
                .iter()
                .map(|&(x, y)| {
                    let jx = rng.random_range(-1.0..=1.0) * style.jitter;
                    let jy = rng.random_range(-1.0..=1.0) * style.jitter;
                    let (gx, gy) = (pen + x + jx, y + dy + jy);
                    let sx = style.slant * (7.0 - gy) * u;
                    let base = if style.slant < 0.0 { skew } else { 0.0 };
                    (pad + gx * u + sx + base, pad + gy * u)
                })
                .collect();
            segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
        }
        pen += gl.width + style.spacing;
    }
    let width = (2.0 * pad + (pen - style.spacing) * u + skew).ceil() as usize;
    let height = (2.0 * pad + 7.0 * u).ceil() as usize;
    let half = style.stroke / 2.0;
    let mut img = GrayImage::filled(width, height, style.paper);
    for &(a, b) in &segments {
        let x0 = (a.0.min(b.0) - half - 1.0).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + half + 1.0).ceil() as usize).min(width);
        let y0 = (a.1.min(b.1) - half - 1.0).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + half + 1.0).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance(x as f64 + 0.5, y as f64 + 0.5, a, b);
                let cover = (half + 0.5 - d).clamp(0.0, 1.0);
                let v = style.paper - (style.paper - style.ink) * cover;
                if v < img.get(x, y) {
                    img.set(x, y, v);
                }
            }
        }
    }
    Ok(img)
}

pub fn supports(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| glyph(c).is_some())
}
