//! Training of the embedding and wordness heads from annotated pages.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::features::{PageFeatures, REFERENCE_DIM, WORDNESS_DIM};
use super::head::{Mode, Trainable};
use super::loss::{total_loss, EmbeddingPair, LossBatch, LossBreakdown, LossWeights, PairLabel, ScoreTerm};
use super::model::SpotModel;
use crate::augmentation::{in_place_augment, AugmentParams};
use crate::dtp::{dtp_proposals, DtpConfig};
use crate::embeddings::{embed_query, EmbeddingKind};
use crate::error::{Error, Result};
use crate::evaluation::{average_precision, judge_results, mean_average_precision, GtPage};
use crate::geometry::{iou, BBox};
use crate::ingestion::Page;
use crate::retrieval::{index_page, query_descriptor, IndexConfig, IndexMeta, PageInput, QueryOptions, SpotIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Width of the two hidden layers of the embedding head.
    pub hidden: usize,
    pub wordness_hidden: usize,
    pub iterations: u64,
    /// Regions per minibatch for each of the two heads.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub positive_iou: f64,
    pub negative_iou: f64,
    /// Perturbed copies of every ground-truth box used as extra positives.
    pub jitter_per_word: usize,
    pub negatives_per_page: usize,
    /// Share of embedding rows drawn from non-word regions; these are only
    /// pushed away from their most similar label.
    pub background_fraction: f64,
    /// In-place augmented copies of every training page.
    pub inplace_copies: usize,
    /// Trailing training pages held out for model selection.
    pub val_pages: usize,
    pub val_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 4096,
            wordness_hidden: 64,
            iterations: 20_000,
            batch_size: 64,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            positive_iou: 0.75,
            negative_iou: 0.4,
            jitter_per_word: 6,
            negatives_per_page: 300,
            background_fraction: 0.25,
            inplace_copies: 1,
            val_pages: 1,
            val_every: 500,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.wordness_hidden == 0 || self.batch_size < 2 {
            return Err(Error::Config("training needs positive layer widths and batches of at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_iou) || !(self.negative_iou < self.positive_iou) || self.positive_iou > 1.0 {
            return Err(Error::Config("training IoU thresholds must satisfy 0 <= negative < positive <= 1".into()));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::Config("background_fraction must lie in [0, 1)".into()));
        }
        self.weights.validate()
    }
}

/// Region samples harvested from the training pages.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub labels: Vec<String>,
    label_embeddings: Vec<Vec<f64>>,
    /// Reference features grouped by label index.
    by_label: Vec<Vec<Vec<f64>>>,
    /// Reference features of non-word regions.
    background: Vec<Vec<f64>>,
    word_pos: Vec<Vec<f64>>,
    word_neg: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn num_positives(&self) -> usize {
        self.by_label.iter().map(Vec::len).sum()
    }

    pub fn num_wordness(&self) -> (usize, usize) {
        (self.word_pos.len(), self.word_neg.len())
    }
}

fn max_iou(b: &BBox, gt: &[BBox]) -> f64 {
    gt.iter().map(|g| iou(b, g)).fold(0.0, f64::max)
}

fn jittered(b: &BBox, rng: &mut ChaCha8Rng) -> BBox {
    let dx = rng.random_range(-0.08..=0.08) * b.w;
    let dy = rng.random_range(-0.1..=0.1) * b.h;
    let sw = rng.random_range(-0.12f64..=0.12).exp();
    let sh = rng.random_range(-0.15f64..=0.15).exp();
    BBox::new(b.xc + dx, b.yc + dy, b.w * sw, b.h * sh)
}

/// Hard negatives shaped like typical proposal errors: word fragments,
/// merged neighbours and random boxes.
fn negative_candidates(gt: &[BBox], width: f64, height: f64, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let mut out = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        let frac = rng.random_range(0.15..0.38);
        let x0 = g.xc - g.w / 2.0 + rng.random_range(0.0..=1.0 - frac) * g.w;
        out.push(BBox::from_corners(x0, g.yc - g.h / 2.0, x0 + frac * g.w, g.yc + g.h / 2.0));
        if let Some(n) = gt.get(i + 1) {
            let [a0, b0, a1, b1] = g.corners();
            let [c0, d0, c1, d1] = n.corners();
            out.push(BBox::from_corners(a0.min(c0), b0.min(d0), a1.max(c1), b1.max(d1)));
        }
    }
    for _ in 0..gt.len().max(10) {
        let h = rng.random_range(8.0..48.0);
        let w = h * rng.random_range(0.8..8.0);
        out.push(BBox::new(rng.random_range(0.0..width), rng.random_range(0.0..height), w, h));
    }
    out
}

struct PageSamples {
    positives: Vec<(String, Vec<f64>)>,
    background: Vec<Vec<f64>>,
    word_pos: Vec<Vec<f64>>,
    word_neg: Vec<Vec<f64>>,
}

fn page_samples(page: &Page, cfg: &TrainConfig, dtp: &DtpConfig, seed: u64) -> Result<PageSamples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (page.image.width() as f64, page.image.height() as f64);
    let pf = PageFeatures::new(&page.image);
    let gt: Vec<BBox> = page.words().iter().map(|g| g.bbox).collect();
    let proposals = dtp_proposals(&page.image, dtp)?;
    let usable = |b: &BBox| b.clip(w, h).filter(|c| c.w >= 2.0 && c.h >= 2.0);

    let mut pos_boxes: Vec<(usize, BBox)> = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        pos_boxes.push((i, *g));
        let mut made = 0;
        for _ in 0..cfg.jitter_per_word * 10 {
            if made == cfg.jitter_per_word {
                break;
            }
            if let Some(b) = usable(&jittered(g, &mut rng)).filter(|b| iou(b, g) > cfg.positive_iou) {
                pos_boxes.push((i, b));
                made += 1;
            }
        }
    }
    let mut negs = Vec::new();
    for p in &proposals {
        let best = gt.iter().enumerate().map(|(i, g)| (i, iou(p, g))).max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, o)) if o > cfg.positive_iou => pos_boxes.push((i, *p)),
            Some((_, o)) if o >= cfg.negative_iou => {}
            _ => negs.push(*p),
        }
    }
    negs.extend(
        negative_candidates(&gt, w, h, &mut rng)
            .iter()
            .filter_map(usable)
            .filter(|b| max_iou(b, &gt) < cfg.negative_iou),
    );
    if negs.len() > cfg.negatives_per_page {
        negs = rand::seq::index::sample(&mut rng, negs.len(), cfg.negatives_per_page)
            .into_iter()
            .map(|i| negs[i])
            .collect();
    }

    let mut positives = Vec::new();
    let mut word_pos = Vec::with_capacity(pos_boxes.len());
    for (i, b) in &pos_boxes {
        let label = &page.words()[*i].label;
        if !label.is_empty() {
            positives.push((label.clone(), pf.reference(b)?));
        }
        word_pos.push(pf.wordness(b)?);
    }
    let word_neg = negs.iter().map(|b| pf.wordness(b)).collect::<Result<Vec<_>>>()?;
    let background = negs.iter().map(|b| pf.reference(b)).collect::<Result<Vec<_>>>()?;
    Ok(PageSamples { positives, background, word_pos, word_neg })
}

/// Harvests positives and negatives from `pages` and their in-place
/// augmented copies.
pub fn build_training_set(
    kind: EmbeddingKind,
    pages: &[Page],
    cfg: &TrainConfig,
    dtp: &DtpConfig,
    augment: &AugmentParams,
) -> Result<TrainingSet> {
    let jobs: Vec<(usize, usize)> = (0..pages.len()).flat_map(|p| (0..=cfg.inplace_copies).map(move |c| (p, c))).collect();
    let samples = jobs
        .par_iter()
        .map(|&(p, c)| {
            let seed = cfg.seed ^ ((p as u64) << 20 | c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let page = &pages[p];
            if page.words().is_empty() {
                return Ok(None);
            }
            let page = if c == 0 { page.clone() } else { in_place_augment(page, augment, seed ^ 0xa5a5)? };
            page_samples(&page, cfg, dtp, seed).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = samples
        .iter()
        .flatten()
        .flat_map(|s| s.positives.iter().map(|(l, _)| l.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::invalid("training pages contain no labelled words"));
    }
    let label_embeddings = labels.iter().map(|l| embed_query(kind, l)).collect::<Result<Vec<_>>>()?;
    let mut by_label = vec![Vec::new(); labels.len()];
    let (mut background, mut word_pos, mut word_neg) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples.into_iter().flatten() {
        for (l, f) in s.positives {
            by_label[labels.binary_search(&l).expect("collected above")].push(f);
        }
        word_pos.extend(s.word_pos);
        background.extend(s.background);
        word_neg.extend(s.word_neg);
    }
    if word_neg.is_empty() {
        return Err(Error::invalid("no negative regions found on the training pages"));
    }
    Ok(TrainingSet { labels, label_embeddings, by_label, background, word_pos, word_neg })
}

/// One minibatch for both heads.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub embed_x: Array2<f64>,
    /// Label index of each embedding row; `None` marks a background region.
    pub embed_labels: Vec<Option<usize>>,
    pub word_x: Array2<f64>,
    pub word_labels: Vec<bool>,
}

fn rows(items: Vec<&Vec<f64>>, dim: usize) -> Array2<f64> {
    let n = items.len();
    Array2::from_shape_vec((n, dim), items.into_iter().flatten().copied().collect()).expect("feature width")
}

pub struct Trainer {
    pub model: SpotModel,
    pub data: TrainingSet,
    cfg: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(kind: EmbeddingKind, data: TrainingSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model: SpotModel::new(kind, cfg.hidden, cfg.wordness_hidden, cfg.seed),
            data,
            cfg: cfg.clone(),
            adam: Adam::new(cfg.adam),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    /// Class-balanced embedding positives plus background regions, and an
    /// even split of wordness positives and negatives.
    pub fn sample_batch(&mut self) -> Minibatch {
        let n = self.cfg.batch_size;
        let classes: Vec<usize> = (0..self.data.labels.len()).filter(|&c| !self.data.by_label[c].is_empty()).collect();
        let n_background =
            if self.data.background.is_empty() { 0 } else { (n as f64 * self.cfg.background_fraction).round() as usize };
        let mut embed = Vec::with_capacity(n);
        let mut embed_labels = Vec::with_capacity(n);
        for i in 0..n {
            if i < n_background {
                embed.push(self.data.background.choose(&mut self.rng).expect("non-empty"));
                embed_labels.push(None);
                continue;
            }
            let c = *classes.choose(&mut self.rng).expect("non-empty");
            embed.push(self.data.by_label[c].choose(&mut self.rng).expect("non-empty"));
            embed_labels.push(Some(c));
        }
        let mut word = Vec::with_capacity(n);
        let mut word_labels = Vec::with_capacity(n);
        for i in 0..n {
            let positive = i % 2 == 0 && !self.data.word_pos.is_empty();
            let pool = if positive { &self.data.word_pos } else { &self.data.word_neg };
            word.push(pool.choose(&mut self.rng).expect("non-empty"));
            word_labels.push(positive);
        }
        Minibatch {
            embed_x: rows(embed, REFERENCE_DIM),
            embed_labels,
            word_x: rows(word, WORDNESS_DIM),
            word_labels,
        }
    }

    /// Each word region is paired with its own label and with the most
    /// similar other label; background regions only with the most similar
    /// label. Also returns the embedding row of every pair.
    fn loss_batch(
        &self,
        y: &Array2<f64>,
        labels: &[Option<usize>],
        logits: &Array1<f64>,
        word_labels: &[bool],
    ) -> (LossBatch, Vec<usize>) {
        let embs = &self.data.label_embeddings;
        let mut pairs = Vec::with_capacity(2 * labels.len());
        let mut rows = Vec::with_capacity(2 * labels.len());
        for (r, (row, &c)) in y.rows().into_iter().zip(labels).enumerate() {
            let v = row.to_vec();
            if let Some(c) = c {
                pairs.push(EmbeddingPair { u: embs[c].clone(), v: v.clone(), label: PairLabel::Match });
                rows.push(r);
            }
            let hardest = (0..embs.len())
                .filter(|&j| Some(j) != c)
                .map(|j| (j, embs[j].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = hardest {
                pairs.push(EmbeddingPair { u: embs[j].clone(), v, label: PairLabel::NonMatch });
                rows.push(r);
            }
        }
        let out_score = logits.iter().zip(word_labels).map(|(&logit, &label)| ScoreTerm { logit, label }).collect();
        (LossBatch { out_score, embed: pairs, ..LossBatch::default() }, rows)
    }

    /// Loss on `batch` with the current parameters, without updating them.
    pub fn evaluate(&self, batch: &Minibatch) -> Result<LossBreakdown> {
        let ec = self.model.embed.forward(&batch.embed_x, Mode::Train)?;
        let wc = self.model.wordness.forward(&batch.word_x)?;
        let (lb, _) = self.loss_batch(&ec.y, &batch.embed_labels, &wc.logits, &batch.word_labels);
        Ok(total_loss(&lb, &self.cfg.weights)?.0)
    }

    /// One ADAM step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &Minibatch) -> Result<LossBreakdown> {
        let ec = self.model.embed.forward(&batch.embed_x, Mode::Train)?;
        let wc = self.model.wordness.forward(&batch.word_x)?;
        let (lb, rows) = self.loss_batch(&ec.y, &batch.embed_labels, &wc.logits, &batch.word_labels);
        let (breakdown, grads) = total_loss(&lb, &self.cfg.weights)?;

        let mut dy = Array2::zeros(ec.y.raw_dim());
        for (&r, g) in rows.iter().zip(&grads.embed_v) {
            dy.row_mut(r).scaled_add(1.0, &ndarray::ArrayView1::from(g.as_slice()));
        }
        let (mut all_grads, _) = self.model.embed.backward(&ec, &dy);
        let (wg, _) = self.model.wordness.backward(&wc, &Array1::from(grads.out_score));
        all_grads.extend(wg);

        self.model.embed.update_running_stats(&ec);
        let mut params = self.model.embed.params_mut();
        params.extend(self.model.wordness.params_mut());
        self.adam.update(&mut params, &all_grads)?;
        self.model.iterations = self.adam.step;
        Ok(breakdown)
    }
}

/// Held-out pages with cached proposals for model selection.
pub struct Validator {
    pages: Vec<Page>,
    proposals: Vec<Vec<BBox>>,
    index: IndexConfig,
}

impl Validator {
    pub fn new(pages: Vec<Page>, index: &IndexConfig) -> Result<Self> {
        let proposals = pages.par_iter().map(|p| dtp_proposals(&p.image, &index.dtp)).collect::<Result<Vec<_>>>()?;
        Ok(Self { pages, proposals, index: IndexConfig { use_rpn: false, ..index.clone() } })
    }

    /// Query-by-string MAP at `overlap` over the labels present on the pages.
    pub fn qbs_map(&self, model: &SpotModel, overlap: f64) -> Result<f64> {
        let pages = self
            .pages
            .par_iter()
            .zip(&self.proposals)
            .map(|(p, b)| index_page(model, PageInput { id: p.id(), image: &p.image }, &self.index, b))
            .collect::<Result<Vec<_>>>()?;
        let idx = SpotIndex { kind: model.kind, dim: model.kind.dim(), pages, meta: IndexMeta::default() };
        let gt: Vec<GtPage> = self.pages.iter().map(|p| GtPage { id: p.id(), words: p.words() }).collect();
        let labels: BTreeSet<&str> =
            self.pages.iter().flat_map(|p| p.words().iter().map(|w| w.label.as_str())).filter(|l| !l.is_empty()).collect();
        let opts = QueryOptions::top(idx.proposal_count().max(1));
        let mut aps = Vec::new();
        for label in labels {
            let hits = query_descriptor(&idx, &embed_query(model.kind, label)?, &opts)?;
            let (rel, total) = judge_results(&hits, &gt, label, overlap);
            aps.push(average_precision(&rel, total));
        }
        mean_average_precision(&aps)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SpotModel,
    /// Total loss of every step.
    pub losses: Vec<f64>,
    /// `(step, MAP)` at every validation.
    pub validation: Vec<(u64, f64)>,
}

/// Full training run: harvest samples, optimize, and keep the snapshot with
/// the best validation MAP (or the last one without validation pages).
pub fn train(
    kind: EmbeddingKind,
    pages: &[Page],
    cfg: &TrainConfig,
    index: &IndexConfig,
    augment: &AugmentParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pages.is_empty() {
        return Err(Error::invalid("no training pages"));
    }
    let n_val = if pages.len() > cfg.val_pages { cfg.val_pages } else { 0 };
    let (train_pages, val_pages) = pages.split_at(pages.len() - n_val);
    let data = build_training_set(kind, train_pages, cfg, &index.dtp, augment)?;
    log::info!(
        "training on {} positives over {} labels, wordness {:?}",
        data.num_positives(),
        data.labels.len(),
        data.num_wordness()
    );
    let validator = if val_pages.iter().any(|p| p.words().iter().any(|w| !w.label.is_empty())) {
        Some(Validator::new(val_pages.to_vec(), index)?)
    } else {
        None
    };
    let mut trainer = Trainer::new(kind, data, cfg)?;
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    let mut validation = Vec::new();
    let mut best: Option<(f64, SpotModel)> = None;
    for it in 1..=cfg.iterations {
        let batch = trainer.sample_batch();
        losses.push(trainer.step(&batch)?.total);
        let due = cfg.val_every > 0 && it % cfg.val_every == 0;
        if let Some(v) = &validator {
            if due || it == cfg.iterations {
                let map = v.qbs_map(&trainer.model, 0.5)?;
                log::info!("step {it}: loss {:.4}, validation MAP {map:.4}", losses[losses.len() - 1]);
                validation.push((it, map));
                if best.as_ref().is_none_or(|(m, _)| map >= *m) {
                    best = Some((map, trainer.model.clone()));
                }
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(trainer.model);
    Ok(TrainOutcome { model, losses, validation })
}
