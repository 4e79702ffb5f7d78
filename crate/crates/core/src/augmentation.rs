//! Synthetic training data: per-word shear and grayscale morphology,
//! in-place page augmentation and row-by-row page synthesis.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::ingestion::{GtWord, Page};
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    None,
    Dilate,
    Erode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Horizontal shear slope range.
    pub shear: (f64, f64),
    /// Operations drawn uniformly per word.
    pub morph_ops: Vec<MorphOp>,
    /// Square structuring element sides drawn uniformly per word.
    pub morph_sizes: Vec<usize>,
    /// Half-width of the canvas background interval around the paper intensity of the words.
    pub background_jitter: f64,
    pub noise_sigma: f64,
    pub page_width: usize,
    pub page_height: usize,
    pub margin: usize,
    /// Inclusive pixel range of horizontal gaps between words.
    pub word_gap: (usize, usize),
    /// Inclusive pixel range of vertical gaps between rows.
    pub row_gap: (usize, usize),
    pub words_per_page: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            shear: (-0.3, 0.3),
            morph_ops: vec![MorphOp::None, MorphOp::Dilate, MorphOp::Erode],
            morph_sizes: vec![1, 2, 3],
            background_jitter: 0.04,
            noise_sigma: 0.01,
            page_width: 800,
            page_height: 600,
            margin: 20,
            word_gap: (32, 56),
            row_gap: (14, 24),
            words_per_page: 30,
        }
    }
}

impl AugmentParams {
    /// No shear, no morphology, no noise.
    pub fn identity() -> Self {
        Self {
            shear: (0.0, 0.0),
            morph_ops: vec![MorphOp::None],
            background_jitter: 0.0,
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augmentation: {m}")));
        if !(self.shear.0 <= self.shear.1) || !(self.background_jitter >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("ranges must be ordered and spreads non-negative");
        }
        if self.word_gap.0 > self.word_gap.1 || self.row_gap.0 > self.row_gap.1 {
            return bad("gap ranges must be ordered");
        }
        if self.morph_ops.is_empty() || self.morph_sizes.is_empty() || self.morph_sizes.contains(&0) {
            return bad("morphology needs at least one op and positive element sizes");
        }
        if 2 * self.margin >= self.page_width.min(self.page_height) {
            return bad("margins leave no room on the canvas");
        }
        Ok(())
    }
}

/// Horizontal shear by `slope` (x shifts by `slope` per row upward from the
/// bottom row). The output widens by `ceil(|slope| (H - 1))` pixels and
/// uncovered pixels take `fill`.
pub fn shear(img: &GrayImage, slope: f64, fill: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let extra = (slope.abs() * (h as f64 - 1.0)).ceil() as usize;
    let base = if slope < 0.0 { slope * (h as f64 - 1.0) } else { 0.0 };
    let out_w = w + extra;
    let mut px = Vec::with_capacity(out_w * h);
    for y in 0..h {
        let shift = slope * (h as f64 - 1.0 - y as f64) - base;
        for x in 0..out_w {
            px.push(img.sample(x as f64 + 0.5 - shift, y as f64 + 0.5, fill));
        }
    }
    GrayImage::from_raw(out_w, h, px)
}

/// Grayscale min (`dilate`, darker ink grows) or max (`erode`) filter over a
/// `size x size` window; the window extends `size / 2` pixels up and left.
pub fn grayscale_morph(img: &GrayImage, op: MorphOp, size: usize) -> GrayImage {
    if op == MorphOp::None || size <= 1 {
        return img.clone();
    }
    let pick = |a: f64, b: f64| if op == MorphOp::Dilate { a.min(b) } else { a.max(b) };
    let (w, h) = (img.width(), img.height());
    let lo = size / 2;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = src.to_vec();
        for y in 0..h {
            for x in 0..w {
                let (p, n) = if horizontal { (x, w) } else { (y, h) };
                let start = p.saturating_sub(lo);
                let end = (p + size - lo).min(n);
                let mut v = src[y * w + x];
                for q in start..end {
                    let idx = if horizontal { y * w + q } else { q * w + x };
                    v = pick(v, src[idx]);
                }
                out[y * w + x] = v;
            }
        }
        out
    };
    let px = pass(&pass(img.pixels(), true), false);
    GrayImage::from_raw(w, h, px)
}

fn draw<T: Clone>(items: &[T], rng: &mut ChaCha8Rng) -> T {
    items[rng.random_range(0..items.len())].clone()
}

fn draw_range(r: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if r.0 == r.1 { r.0 } else { rng.random_range(r.0..=r.1) }
}

/// Random shear followed by a random grayscale morphology.
pub fn augment_word(img: &GrayImage, p: &AugmentParams, seed: u64) -> GrayImage {
    augment_word_rng(img, p, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn augment_word_rng(img: &GrayImage, p: &AugmentParams, rng: &mut ChaCha8Rng) -> GrayImage {
    let slope = draw_range(p.shear, rng);
    let op = draw(&p.morph_ops, rng);
    let size = draw(&p.morph_sizes, rng);
    let sheared = shear(img, slope, border_median(img));
    grayscale_morph(&sheared, op, size)
}

/// Integer pixel rectangle `(x0, y0, x1, y1)` covering a box, clipped.
fn pixel_rect(b: &BBox, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let [x0, y0, x1, y1] = b.corners();
    let x0 = x0.floor().max(0.0) as usize;
    let y0 = y0.floor().max(0.0) as usize;
    let x1 = (x1.ceil().max(0.0) as usize).min(w);
    let y1 = (y1.ceil().max(0.0) as usize).min(h);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Augments every annotated word where it stands, resizing the result back
/// to the word's pixel rectangle. Overlapping words are processed in
/// annotation order, so later words win.
pub fn in_place_augment(page: &Page, p: &AugmentParams, seed: u64) -> Result<Page> {
    if page.record.words.is_empty() {
        return Err(Error::invalid(format!("page {} has no ground-truth boxes", page.record.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = page.image.clone();
    for w in &page.record.words {
        let Some((x0, y0, x1, y1)) = pixel_rect(&w.bbox, image.width(), image.height()) else { continue };
        let crop = image.crop(x0, y0, x1 - x0, y1 - y0)?;
        let aug = augment_word_rng(&crop, p, &mut rng).resize(x1 - x0, y1 - y0);
        for y in 0..aug.height() {
            for x in 0..aug.width() {
                image.set(x0 + x, y0 + y, aug.get(x, y));
            }
        }
    }
    Ok(Page { record: page.record.clone(), image })
}

/// A labelled word image for page synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWord {
    pub label: String,
    pub image: GrayImage,
}

/// Median of the outermost pixel ring, taken as the paper intensity.
fn border_median(img: &GrayImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut ring: Vec<f64> = (0..w).flat_map(|x| [img.get(x, 0), img.get(x, h - 1)]).collect();
    ring.extend((0..h).flat_map(|y| [img.get(0, y), img.get(w - 1, y)]));
    ring.sort_by(f64::total_cmp);
    ring[ring.len() / 2]
}

/// Crops to the pixels darker than the paper by more than 0.1; `None` when
/// there are none.
fn trim_to_ink(img: &GrayImage, paper: f64) -> Option<GrayImage> {
    let thr = paper - 0.1;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < thr {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x1 > x0).then(|| img.crop(x0, y0, x1 - x0, y1 - y0).expect("inside"))
}

/// Draws word indices: uniformly over classes by default, or with the given
/// per-class weights; instances are then drawn uniformly within a class.
pub struct ClassSampler {
    classes: Vec<Vec<usize>>,
    dist: WeightedIndex<f64>,
}

impl ClassSampler {
    pub fn new(words: &[LabeledWord], weights: Option<&[f64]>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("page synthesis needs at least one word image"));
        }
        let mut labels: Vec<&str> = words.iter().map(|w| w.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        let classes: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| (0..words.len()).filter(|&i| words[i].label == *l).collect())
            .collect();
        let weights = match weights {
            Some(w) if w.len() != classes.len() => {
                return Err(Error::DimensionMismatch { expected: classes.len(), got: w.len() })
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; classes.len()],
        };
        let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("class weights: {e}")))?;
        Ok(Self { classes, dist })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Returns `(class, word index)`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let c = self.dist.sample(rng);
        (c, draw(&self.classes[c], rng))
    }
}

/// Composes a page from augmented word images placed left-aligned
/// row-by-row on a noisy background canvas.
pub fn full_page_synthesize(id: &str, words: &[LabeledWord], p: &AugmentParams, seed: u64) -> Result<Page> {
    synthesize_with(id, words, &ClassSampler::new(words, None)?, p, seed)
}

pub fn synthesize_with(id: &str, words: &[LabeledWord], sampler: &ClassSampler, p: &AugmentParams, seed: u64) -> Result<Page> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pw, ph) = (p.page_width, p.page_height);
    let paper = words.iter().map(|w| border_median(&w.image)).sum::<f64>() / words.len() as f64;
    let bg = paper + draw_range((-p.background_jitter, p.background_jitter), &mut rng);
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut canvas: Vec<f64> = (0..pw * ph).map(|_| bg + noise.sample(&mut rng)).collect();

    let mut gt = Vec::new();
    let (mut x, mut y, mut row_h) = (p.margin, p.margin, 0usize);
    while gt.len() < p.words_per_page {
        let (_, wi) = sampler.sample(&mut rng);
        let src = &words[wi];
        let aug = augment_word_rng(&src.image, p, &mut rng);
        let word_bg = border_median(&aug);
        let Some(ink) = trim_to_ink(&aug, word_bg) else {
            return Err(Error::invalid(format!("word image {:?} has no visible ink", src.label)));
        };
        let (w, h) = (ink.width(), ink.height());
        if w + 2 * p.margin > pw || h + 2 * p.margin > ph {
            return Err(Error::invalid(format!(
                "word {:?} ({w}x{h}) does not fit a {pw}x{ph} canvas",
                src.label
            )));
        }
        if x + w + p.margin > pw {
            y += row_h + rng.random_range(p.row_gap.0..=p.row_gap.1);
            x = p.margin;
            row_h = 0;
        }
        if y + h + p.margin > ph {
            break;
        }
        for yy in 0..h {
            for xx in 0..w {
                let i = (y + yy) * pw + x + xx;
                canvas[i] -= (word_bg - ink.get(xx, yy)).max(0.0);
            }
        }
        gt.push(GtWord {
            bbox: BBox::from_corners(x as f64, y as f64, (x + w) as f64, (y + h) as f64),
            label: src.label.clone(),
        });
        row_h = row_h.max(h);
        x += w + rng.random_range(p.word_gap.0..=p.word_gap.1);
    }
    canvas.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Page {
        record: crate::ingestion::PageRecord {
            id: id.to_string(),
            image: std::path::PathBuf::new(),
            words: gt,
            transcription: None,
        },
        image: GrayImage::new(pw, ph, canvas)?,
    })
}
