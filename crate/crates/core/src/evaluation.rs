//! Retrieval metrics: average precision under box-overlap and
//! transcription-count relevance, query-set construction and proposal recall.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::ingestion::GtWord;
use crate::retrieval::Hit;

/// Average precision of a ranked relevance list. `total_relevant` counts all
/// relevant items, retrieved or not; it is zero-safe.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("mean average precision of an empty query set"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Ground truth of one page, for judging hits.
#[derive(Debug, Clone, Copy)]
pub struct GtPage<'a> {
    pub id: &'a str,
    pub words: &'a [GtWord],
}

/// Marks each hit relevant when it overlaps an unclaimed ground-truth word
/// of `label` on its page with IoU at least `overlap`. Each ground-truth
/// word can make at most one hit relevant; a hit claims the best-overlapping
/// free word. Returns the relevance list and the number of relevant words.
pub fn judge_results(hits: &[Hit], gt: &[GtPage<'_>], label: &str, overlap: f64) -> (Vec<bool>, usize) {
    let by_page: HashMap<&str, Vec<&BBox>> = gt
        .iter()
        .map(|p| (p.id, p.words.iter().filter(|w| w.label == label).map(|w| &w.bbox).collect()))
        .collect();
    let total = by_page.values().map(Vec::len).sum();
    let mut claimed: HashMap<&str, Vec<bool>> =
        by_page.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();
    let relevance = hits
        .iter()
        .map(|h| {
            let Some(words) = by_page.get(h.page_id.as_str()) else { return false };
            let used = claimed.get_mut(h.page_id.as_str()).expect("same keys");
            let mut best: Option<(usize, f64)> = None;
            for (i, b) in words.iter().enumerate() {
                let o = iou(&h.bbox, b);
                if !used[i] && o >= overlap && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((i, o));
                }
            }
            if let Some((i, _)) = best {
                used[i] = true;
                true
            } else {
                false
            }
        })
        .collect();
    (relevance, total)
}

/// A query-by-example instance: a ground-truth word used as the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleQuery {
    pub page: usize,
    pub word: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySets {
    /// Every non-empty ground-truth instance.
    pub qbe: Vec<ExampleQuery>,
    /// Unique non-empty labels, sorted.
    pub qbs: Vec<String>,
}

pub fn build_query_sets(gt: &[GtPage<'_>]) -> QuerySets {
    let mut qbe = Vec::new();
    let mut labels = std::collections::BTreeSet::new();
    for (pi, p) in gt.iter().enumerate() {
        for (wi, w) in p.words.iter().enumerate() {
            if w.label.is_empty() {
                continue;
            }
            qbe.push(ExampleQuery { page: pi, word: wi, label: w.label.clone() });
            labels.insert(w.label.clone());
        }
    }
    QuerySets { qbe, qbs: labels.into_iter().collect() }
}

/// Fraction of ground-truth boxes on a page covered by some proposal with
/// IoU at least `overlap`.
pub fn page_recall(proposals: &[BBox], gt: &[BBox], overlap: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let covered = gt.iter().filter(|g| proposals.iter().any(|p| iou(p, g) >= overlap)).count();
    Some(covered as f64 / gt.len() as f64)
}

/// Per-page recall averaged over pages that have ground truth.
pub fn proposal_recall(pages: &[(Vec<BBox>, Vec<BBox>)], overlap: f64) -> Result<f64> {
    let r: Vec<f64> = pages.iter().filter_map(|(p, g)| page_recall(p, g, overlap)).collect();
    if r.is_empty() {
        return Err(Error::invalid("no ground truth to measure recall against"));
    }
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Average precision when only per-page word counts are known. A hit on a
/// page is relevant while the page still has unclaimed occurrences of the
/// query; further hits on such a page are dropped from the ranking, and hits
/// on pages without the word are irrelevant. The relevant total is the sum
/// of the counts.
pub fn transcription_ap(hits: &[Hit], counts: &HashMap<String, usize>) -> f64 {
    let total: usize = counts.values().sum();
    let mut budget = counts.clone();
    let mut relevance = Vec::with_capacity(hits.len());
    for h in hits {
        match budget.get_mut(&h.page_id) {
            Some(n) if *n > 0 => {
                *n -= 1;
                relevance.push(true);
            }
            Some(_) if counts.get(&h.page_id).copied().unwrap_or(0) > 0 => {}
            _ => relevance.push(false),
        }
    }
    average_precision(&relevance, total)
}

/// Occurrences of `word` in each transcribed page.
pub fn transcription_counts<'a>(pages: impl IntoIterator<Item = (&'a str, &'a [String])>, word: &str) -> HashMap<String, usize> {
    pages
        .into_iter()
        .map(|(id, tokens)| (id.to_string(), tokens.iter().filter(|t| *t == word).count()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query: String,
    pub ap: f64,
}

/// Results of one protocol at one overlap threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: String,
    pub overlap: f64,
    pub map: f64,
    pub queries: Vec<QueryAp>,
    /// Queries without any relevant item, left out of the mean.
    pub excluded: Vec<String>,
}

impl ProtocolReport {
    /// Averages the per-query APs, moving queries with no relevant items
    /// (`None`) to the excluded list.
    pub fn from_queries(protocol: &str, overlap: f64, results: Vec<(String, Option<f64>)>) -> Result<Self> {
        let mut queries = Vec::new();
        let mut excluded = Vec::new();
        for (q, ap) in results {
            match ap {
                Some(ap) => queries.push(QueryAp { query: q, ap }),
                None => excluded.push(q),
            }
        }
        let aps: Vec<f64> = queries.iter().map(|q| q.ap).collect();
        Ok(Self { protocol: protocol.into(), overlap, map: mean_average_precision(&aps)?, queries, excluded })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocols: Vec<ProtocolReport>,
    /// Proposal recall keyed by overlap threshold (formatted).
    pub recall: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn map(&self, protocol: &str, overlap: f64) -> Option<f64> {
        self.protocols.iter().find(|p| p.protocol == protocol && p.overlap == overlap).map(|p| p.map)
    }
}
