//! Building a searchable index of word regions and answering queries
//! against it, by string or by example.

mod index_file;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtp::{dtp_proposals, DtpConfig};
use crate::embeddings::{embed_query, EmbeddingKind};
use crate::error::{Error, Result};
use crate::geometry::{nms, score_order, BBox};
use crate::localization::{generate_anchors, AnchorGrid};
use crate::neural::{PageFeatures, SpotModel};
use crate::raster::GrayImage;

pub use index_file::{INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalSource {
    Dtp,
    Rpn,
}

/// A scored region with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub wordness: f64,
    pub source: ProposalSource,
    /// Stored in single precision; similarities are computed in f64.
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageProposals {
    pub page_id: String,
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub model_id: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotIndex {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub pages: Vec<PageProposals>,
    pub meta: IndexMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    pub dtp: DtpConfig,
    pub anchors: AnchorGrid,
    /// Adds anchor proposals ranked by wordness to the DTP set.
    pub use_rpn: bool,
    pub wordness_threshold: f64,
    pub score_nms: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            dtp: DtpConfig::default(),
            anchors: AnchorGrid::default(),
            use_rpn: false,
            wordness_threshold: 0.01,
            score_nms: 0.4,
        }
    }
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub page_id: String,
    pub bbox: BBox,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOptions {
    pub k: usize,
    /// Per-page suppression of overlapping hits.
    pub nms_overlap: f64,
    /// Restrict results to these page ids.
    pub pages: Option<Vec<String>>,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self { k: 20, nms_overlap: 0.01, pages: None }
    }
}

impl QueryOptions {
    pub fn top(k: usize) -> Self {
        Self { k, ..Self::default() }
    }
}

/// Input to indexing: an identifier and the page raster.
#[derive(Debug, Clone, Copy)]
pub struct PageInput<'a> {
    pub id: &'a str,
    pub image: &'a GrayImage,
}

/// Anchor proposals for a page, clipped to it and ranked by wordness.
fn anchor_proposals(model: &SpotModel, pf: &PageFeatures, grid: &AnchorGrid, n: usize) -> Result<Vec<(BBox, f64)>> {
    let (w, h) = (pf.width() as f64, pf.height() as f64);
    let fw = pf.width().div_ceil(grid.stride);
    let fh = pf.height().div_ceil(grid.stride);
    let boxes: Vec<BBox> = generate_anchors(fw, fh, grid)
        .into_iter()
        .filter_map(|a| a.clip(w, h))
        .filter(|b| b.w >= 2.0 && b.h >= 2.0)
        .collect();
    let scores = model.wordness_scores(pf, &boxes)?;
    Ok(score_order(&scores).into_iter().take(n).map(|i| (boxes[i], scores[i])).collect())
}

/// Scores, filters, suppresses and describes the candidate regions of one page.
pub fn index_page(
    model: &SpotModel,
    page: PageInput<'_>,
    cfg: &IndexConfig,
    dtp_boxes: &[BBox],
) -> Result<PageProposals> {
    let pf = PageFeatures::new(page.image);
    let mut boxes: Vec<BBox> = dtp_boxes.to_vec();
    let mut scores = model.wordness_scores(&pf, &boxes)?;
    let mut sources = vec![ProposalSource::Dtp; boxes.len()];
    if cfg.use_rpn {
        for (b, s) in anchor_proposals(model, &pf, &cfg.anchors, dtp_boxes.len().max(1))? {
            boxes.push(b);
            scores.push(s);
            sources.push(ProposalSource::Rpn);
        }
    }
    let kept: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= cfg.wordness_threshold).collect();
    let kept_boxes: Vec<BBox> = kept.iter().map(|&i| boxes[i]).collect();
    let kept_scores: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
    let survivors: Vec<usize> =
        nms(&kept_boxes, &kept_scores, cfg.score_nms)?.into_iter().map(|j| kept[j]).collect();
    let final_boxes: Vec<BBox> = survivors.iter().map(|&i| boxes[i]).collect();
    let desc = model.embed_regions(&pf, &final_boxes)?;
    let proposals = survivors
        .iter()
        .zip(desc.rows())
        .map(|(&i, row)| Proposal {
            bbox: boxes[i],
            wordness: scores[i],
            source: sources[i],
            descriptor: row.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    Ok(PageProposals { page_id: page.id.to_string(), proposals })
}

fn check_pages(pages: &[PageInput<'_>]) -> Result<()> {
    if pages.is_empty() {
        return Err(Error::invalid("cannot build an index from an empty page set"));
    }
    let mut seen = HashSet::new();
    for p in pages {
        if !seen.insert(p.id) {
            return Err(Error::invalid(format!("duplicate page id {:?}", p.id)));
        }
    }
    Ok(())
}

/// Runs DTP and the model over every page. `meta` carries the model and
/// configuration fingerprints used for later compatibility checks.
pub fn build_index(pages: &[PageInput<'_>], model: &SpotModel, cfg: &IndexConfig, meta: IndexMeta) -> Result<SpotIndex> {
    if !model.is_trained() {
        return Err(Error::invalid("model has not been trained"));
    }
    check_pages(pages)?;
    cfg.dtp.validate()?;
    cfg.anchors.validate()?;
    let pages = pages
        .par_iter()
        .map(|p| index_page(model, *p, cfg, &dtp_proposals(p.image, &cfg.dtp)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpotIndex { kind: model.kind, dim: model.kind.dim(), pages, meta })
}

fn cosine_f32(desc: &[f32], q: &[f64], q_norm: f64) -> f64 {
    let (mut dot, mut nn) = (0.0, 0.0);
    for (&d, &v) in desc.iter().zip(q) {
        let d = d as f64;
        dot += d * v;
        nn += d * d;
    }
    if nn == 0.0 {
        return 0.0;
    }
    (dot / (nn.sqrt() * q_norm)).clamp(-1.0, 1.0)
}

/// Ranks every indexed region by cosine similarity to `query`.
pub fn query_descriptor(idx: &SpotIndex, query: &[f64], opts: &QueryOptions) -> Result<Vec<Hit>> {
    if query.len() != idx.dim {
        return Err(Error::DimensionMismatch { expected: idx.dim, got: query.len() });
    }
    if opts.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&opts.nms_overlap) {
        return Err(Error::invalid("query overlap threshold must lie in [0, 1]"));
    }
    let q_norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(q_norm > 0.0) {
        return Err(Error::invalid("query descriptor has zero length"));
    }
    let allowed: Option<HashSet<&str>> = opts.pages.as_ref().map(|p| p.iter().map(String::as_str).collect());
    let per_page: Vec<Vec<(usize, usize, f64)>> = idx
        .pages
        .par_iter()
        .enumerate()
        .filter(|(_, p)| allowed.as_ref().is_none_or(|a| a.contains(p.page_id.as_str())))
        .map(|(pi, p)| {
            let sims: Vec<f64> = p.proposals.iter().map(|r| cosine_f32(&r.descriptor, query, q_norm)).collect();
            let boxes: Vec<BBox> = p.proposals.iter().map(|r| r.bbox).collect();
            let keep = nms(&boxes, &sims, opts.nms_overlap).expect("validated threshold");
            keep.into_iter().map(|i| (pi, i, sims[i])).collect()
        })
        .collect();
    let mut all: Vec<(usize, usize, f64)> = per_page.into_iter().flatten().collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all.truncate(opts.k);
    Ok(all
        .into_iter()
        .map(|(pi, i, similarity)| Hit {
            page_id: idx.pages[pi].page_id.clone(),
            bbox: idx.pages[pi].proposals[i].bbox,
            similarity,
        })
        .collect())
}

pub fn query_by_string(idx: &SpotIndex, query: &str, k: usize) -> Result<Vec<Hit>> {
    query_by_string_with(idx, query, &QueryOptions::top(k))
}

/// Embeds the normalized query string and ranks regions against it.
pub fn query_by_string_with(idx: &SpotIndex, query: &str, opts: &QueryOptions) -> Result<Vec<Hit>> {
    query_descriptor(idx, &embed_query(idx.kind, query)?, opts)
}

/// Describes `bbox` of `image` with `model` and ranks regions against it.
/// The model must be the one the index was built with.
pub fn query_by_example(
    idx: &SpotIndex,
    model: &SpotModel,
    image: &GrayImage,
    bbox: &BBox,
    opts: &QueryOptions,
) -> Result<Vec<Hit>> {
    idx.check_model(model)?;
    query_descriptor(idx, &model.embed_region(image, bbox)?, opts)
}

impl SpotIndex {
    pub fn proposal_count(&self) -> usize {
        self.pages.iter().map(|p| p.proposals.len()).sum()
    }

    pub fn page(&self, id: &str) -> Option<&PageProposals> {
        self.pages.iter().find(|p| p.page_id == id)
    }

    /// Errors unless `model` has the embedding kind and fingerprint recorded
    /// in the index.
    pub fn check_model(&self, model: &SpotModel) -> Result<()> {
        if model.kind != self.kind {
            return Err(Error::Mismatch(format!(
                "index uses {} embeddings, model produces {}",
                self.kind, model.kind
            )));
        }
        self.check_model_id(&model.id())
    }

    pub fn check_model_id(&self, model_id: &str) -> Result<()> {
        if model_id != self.meta.model_id {
            return Err(Error::Mismatch(format!(
                "index was built with model {}, got {}",
                self.meta.model_id, model_id
            )));
        }
        Ok(())
    }

    pub fn check_config_hash(&self, config_hash: &str) -> Result<()> {
        if config_hash != self.meta.config_hash {
            return Err(Error::Mismatch(format!(
                "index was built with config {}, current config is {}",
                self.meta.config_hash, config_hash
            )));
        }
        Ok(())
    }
}
