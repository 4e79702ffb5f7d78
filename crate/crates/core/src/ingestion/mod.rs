//! Dataset I/O: annotation manifests, page images, resizing and
//! ground-truth hygiene.

mod config;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, Thresholds};

use crate::embeddings::normalize_label;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::GrayImage;

/// A ground-truth word: box in page pixels plus normalized label.
#[derive(Debug, Clone, PartialEq)]
pub struct GtWord {
    pub bbox: BBox,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub id: String,
    /// Resolved image path (manifest-relative paths are joined onto the
    /// manifest directory at load time).
    pub image: PathBuf,
    pub words: Vec<GtWord>,
    pub transcription: Option<Vec<String>>,
}

/// A page record together with its decoded image.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub record: PageRecord,
    pub image: GrayImage,
}

impl Page {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn words(&self) -> &[GtWord] {
        &self.record.words
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    pages: Vec<ManifestPage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestPage {
    id: String,
    image: String,
    #[serde(default)]
    words: Vec<ManifestWord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transcription: Option<Vec<String>>,
}

/// Corner-form integer annotation: top-left `(x, y)` plus size.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestWord {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    label: String,
}

/// Whitespace-splits a transcription line and normalizes every token.
pub fn tokenize_transcription(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_label).filter(|t| !t.is_empty()).collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PageRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let err = |message: String| Error::Manifest { path: path.to_path_buf(), message };
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut pages = Vec::with_capacity(file.pages.len());
    for (i, p) in file.pages.into_iter().enumerate() {
        if p.id.is_empty() {
            return Err(err(format!("pages[{i}]: empty page id")));
        }
        if !seen.insert(p.id.clone()) {
            return Err(err(format!("page {:?}: duplicate page id", p.id)));
        }
        let image = base.join(&p.image);
        if !image.is_file() {
            return Err(err(format!("page {:?}: image {} not found", p.id, image.display())));
        }
        let mut words = Vec::with_capacity(p.words.len());
        for (j, w) in p.words.into_iter().enumerate() {
            if w.w <= 0 || w.h <= 0 || w.x < 0 || w.y < 0 {
                return Err(err(format!(
                    "page {:?}: words[{j}] has invalid geometry x={} y={} w={} h={}",
                    p.id, w.x, w.y, w.w, w.h
                )));
            }
            let (x, y) = (w.x as f64, w.y as f64);
            words.push(GtWord {
                bbox: BBox::from_corners(x, y, x + w.w as f64, y + w.h as f64),
                label: normalize_label(&w.label),
            });
        }
        let transcription =
            p.transcription.map(|t| t.iter().flat_map(|s| tokenize_transcription(s)).collect());
        pages.push(PageRecord { id: p.id, image, words, transcription });
    }
    Ok(pages)
}

/// Writes a manifest; image paths are stored relative to the manifest's
/// directory when possible. Boxes are rounded to integer corners.
pub fn save_manifest(path: impl AsRef<Path>, pages: &[PageRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = ManifestFile {
        pages: pages
            .iter()
            .map(|p| ManifestPage {
                id: p.id.clone(),
                image: p.image.strip_prefix(base).unwrap_or(&p.image).to_string_lossy().into_owned(),
                words: p
                    .words
                    .iter()
                    .map(|w| {
                        let [x0, y0, x1, y1] = w.bbox.corners();
                        let (x, y) = (x0.round() as i64, y0.round() as i64);
                        ManifestWord { x, y, w: x1.round() as i64 - x, h: y1.round() as i64 - y, label: w.label.clone() }
                    })
                    .collect(),
                transcription: p.transcription.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Decodes an 8-bit PNG or PGM (color inputs are converted by luminance).
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    GrayImage::new(w as usize, h as usize, luma.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.pixels().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Loads the image of a record and clamps its boxes to the image bounds,
/// dropping boxes left without area.
pub fn load_page(record: &PageRecord) -> Result<Page> {
    let image = read_image(&record.image)?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let mut record = record.clone();
    let before = record.words.len();
    record.words = record
        .words
        .into_iter()
        .filter_map(|gw| gw.bbox.clip(w, h).map(|bbox| GtWord { bbox, ..gw }))
        .collect();
    if record.words.len() < before {
        log::warn!("page {}: dropped {} boxes outside the image", record.id, before - record.words.len());
    }
    Ok(Page { record, image })
}

/// Aspect-preserving bilinear resize so the longest side equals `target`.
pub fn resize_image(img: &GrayImage, target_long_side: usize) -> (GrayImage, f64) {
    let long = img.width().max(img.height());
    if long == target_long_side {
        return (img.clone(), 1.0);
    }
    let scale = target_long_side as f64 / long as f64;
    let w = ((img.width() as f64 * scale).round() as usize).max(1);
    let h = ((img.height() as f64 * scale).round() as usize).max(1);
    (img.resize(w, h), scale)
}

/// Resizes the page image and scales its boxes by the same factor.
pub fn resize_page(page: &Page, target_long_side: usize) -> (Page, f64) {
    let (image, scale) = resize_image(&page.image, target_long_side);
    let mut record = page.record.clone();
    for w in &mut record.words {
        w.bbox = w.bbox.scale(scale);
    }
    (Page { record, image }, scale)
}

/// Drops boxes that collapse to zero width or height after integer
/// downsampling by `downsample`. Returns the number removed.
pub fn filter_degenerate_gt(pages: &mut [PageRecord], downsample: u32) -> usize {
    let d = downsample.max(1) as f64;
    let mut removed = 0;
    for p in pages.iter_mut() {
        let before = p.words.len();
        p.words.retain(|w| (w.bbox.w / d).floor() > 0.0 && (w.bbox.h / d).floor() > 0.0);
        removed += before - p.words.len();
    }
    if removed > 0 {
        log::info!("removed {removed} ground-truth boxes smaller than {downsample} px");
    }
    removed
}

/// Loads every record in parallel, resizes it when the configuration asks
/// for it and drops degenerate ground truth.
pub fn prepare_pages(records: &[PageRecord], cfg: &RunConfig) -> Result<Vec<Page>> {
    records
        .par_iter()
        .map(|r| {
            let page = load_page(r)?;
            let mut page = if cfg.resize_pages { resize_page(&page, cfg.resize_long_side).0 } else { page };
            filter_degenerate_gt(std::slice::from_mut(&mut page.record), cfg.min_gt_downsample);
            Ok(page)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, manifest: &str) -> PathBuf {
        write_png(&GrayImage::filled(40, 30, 0.9), dir.join("p1.png")).unwrap();
        let path = dir.join("m.json");
        std::fs::write(&path, manifest).unwrap();
        path
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), r#"{"pages": []}"#);
        assert!(load_manifest(path).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(
            dir.path(),
            r#"{"pages": [{"id": "p1", "image": "p1.png",
                "words": [{"x": 1, "y": 2, "w": 10, "h": 5, "label": "The"}],
                "transcription": ["The wife", "paid."]}]}"#,
        );
        let pages = load_manifest(&path).unwrap();
        assert_eq!(pages[0].words[0].label, "the");
        assert_eq!(pages[0].words[0].bbox, BBox::from_corners(1.0, 2.0, 11.0, 7.0));
        assert_eq!(pages[0].transcription.as_deref().unwrap(), ["the", "wife", "paid"]);
        let out = dir.path().join("m2.json");
        save_manifest(&out, &pages).unwrap();
        assert_eq!(load_manifest(&out).unwrap(), pages);
    }

    #[test]
    fn manifest_errors_are_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(
            dir.path(),
            r#"{"pages": [{"id": "folio-7", "image": "p1.png", "words": [{"x": 1, "y": 2, "w": -3, "h": 5, "label": "a"}]}]}"#,
        );
        let e = load_manifest(&path).unwrap_err().to_string();
        assert!(e.contains("folio-7"), "{e}");

        let path = write_fixture(dir.path(), r#"{"pages": [{"id": "a", "image": "missing.png"}]}"#);
        assert!(load_manifest(&path).unwrap_err().to_string().contains("not found"));

        let path = write_fixture(dir.path(), r#"{"pages": [{"id": "a", "image": "p1.png", "colour": 1}]}"#);
        let e = load_manifest(&path).unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line"), "{e}");

        let path = write_fixture(
            dir.path(),
            r#"{"pages": [{"id": "a", "image": "p1.png"}, {"id": "a", "image": "p1.png"}]}"#,
        );
        assert!(load_manifest(&path).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn resize_examples() {
        let img = GrayImage::filled(1720, 300, 0.5);
        let (out, s) = resize_image(&img, 1720);
        assert_eq!((s, out.width()), (1.0, 1720));

        let img = GrayImage::filled(3440, 1000, 0.5);
        let (out, s) = resize_image(&img, 1720);
        assert_eq!((out.width(), out.height(), s), (1720, 500, 0.5));

        let record = PageRecord {
            id: "p".into(),
            image: PathBuf::new(),
            words: vec![GtWord { bbox: BBox::new(100.0, 40.0, 60.0, 20.0), label: "x".into() }],
            transcription: None,
        };
        let (p, s) = resize_page(&Page { record, image: img }, 1720);
        assert_eq!(p.record.words[0].bbox, BBox::new(100.0 * s, 40.0 * s, 60.0 * s, 20.0 * s));
    }

    #[test]
    fn degenerate_filter() {
        let word = |w: f64, h: f64| GtWord { bbox: BBox::new(50.0, 50.0, w, h), label: "a".into() };
        let mut pages = vec![PageRecord {
            id: "p".into(),
            image: PathBuf::new(),
            words: vec![word(7.0, 40.0), word(8.0, 40.0), word(30.0, 7.9)],
            transcription: None,
        }];
        assert_eq!(filter_degenerate_gt(&mut pages, 8), 2);
        assert_eq!(pages[0].words, vec![word(8.0, 40.0)]);
        let snapshot = pages.clone();
        assert_eq!(filter_degenerate_gt(&mut pages, 8), 0);
        assert_eq!(pages, snapshot);
    }

    #[test]
    fn load_page_decodes_and_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(
            dir.path(),
            r#"{"pages": [{"id": "p1", "image": "p1.png", "words": [{"x": 30, "y": 2, "w": 20, "h": 5, "label": "a"}]}]}"#,
        );
        let rec = &load_manifest(path).unwrap()[0];
        let page = load_page(rec).unwrap();
        assert_eq!((page.image.width(), page.image.height()), (40, 30));
        assert!((page.image.get(3, 3) - 230.0 / 255.0).abs() < 1e-12);
        assert_eq!(page.record.words[0].bbox, BBox::from_corners(30.0, 2.0, 40.0, 7.0));
    }
}
