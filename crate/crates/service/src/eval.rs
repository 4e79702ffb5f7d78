//! Benchmark protocols over an index and its annotated pages.

use std::collections::HashMap;

use ctrlf_core::dtp::dtp_proposals;
use ctrlf_core::evaluation::{
    average_precision, build_query_sets, judge_results, proposal_recall, transcription_ap, transcription_counts,
    EvalReport, GtPage, ProtocolReport,
};
use ctrlf_core::retrieval::{query_by_example, query_by_string_with, QueryOptions};
use ctrlf_core::{Error, Page, Result, RunConfig, SpotIndex, SpotModel};
use rayon::prelude::*;

/// Runs QbS at every overlap, QbE when a model is given, the transcription
/// protocol when pages carry transcriptions, and DTP recall.
pub fn evaluate(
    index: &SpotIndex,
    pages: &[Page],
    model: Option<&SpotModel>,
    overlaps: &[f64],
    cfg: &RunConfig,
) -> Result<EvalReport> {
    if let Some(p) = pages.iter().find(|p| index.page(p.id()).is_none()) {
        return Err(Error::Mismatch(format!("page {:?} is not in the index", p.id())));
    }
    let gt: Vec<GtPage> = pages.iter().map(|p| GtPage { id: p.id(), words: p.words() }).collect();
    let sets = build_query_sets(&gt);
    let opts = QueryOptions { k: index.proposal_count().max(1), ..cfg.query_options(1) };
    let mut report = EvalReport::default();

    let qbs_hits = sets
        .qbs
        .par_iter()
        .map(|label| query_by_string_with(index, label, &opts))
        .collect::<Result<Vec<_>>>()?;
    for &overlap in overlaps {
        let results = sets
            .qbs
            .iter()
            .zip(&qbs_hits)
            .map(|(label, hits)| (label.clone(), judged_ap(hits, &gt, label, overlap)))
            .collect();
        push_protocol(&mut report, "qbs", overlap, results)?;
    }

    if let Some(model) = model {
        let qbe_hits = sets
            .qbe
            .par_iter()
            .map(|q| {
                let page = &pages[q.page];
                query_by_example(index, model, &page.image, &page.words()[q.word].bbox, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        for &overlap in overlaps {
            let results = sets
                .qbe
                .iter()
                .zip(&qbe_hits)
                .map(|(q, hits)| {
                    let name = format!("{}#{}:{}", pages[q.page].id(), q.word, q.label);
                    (name, judged_ap(hits, &gt, &q.label, overlap))
                })
                .collect();
            push_protocol(&mut report, "qbe", overlap, results)?;
        }
    }

    let transcribed: Vec<(&str, &[String])> =
        pages.iter().filter_map(|p| p.record.transcription.as_deref().map(|t| (p.id(), t))).collect();
    if !transcribed.is_empty() {
        let ids: Vec<String> = transcribed.iter().map(|(id, _)| id.to_string()).collect();
        let t_opts = QueryOptions { pages: Some(ids), ..opts.clone() };
        let results = sets
            .qbs
            .par_iter()
            .map(|label| {
                let counts: HashMap<String, usize> = transcription_counts(transcribed.iter().copied(), label);
                let total: usize = counts.values().sum();
                let hits = query_by_string_with(index, label, &t_opts)?;
                Ok((label.clone(), (total > 0).then(|| transcription_ap(&hits, &counts))))
            })
            .collect::<Result<Vec<_>>>()?;
        push_protocol(&mut report, "transcription", 0.0, results)?;
    }

    let proposals = pages
        .par_iter()
        .map(|p| Ok((dtp_proposals(&p.image, &cfg.dtp)?, p.words().iter().map(|w| w.bbox).collect())))
        .collect::<Result<Vec<_>>>()?;
    for &overlap in overlaps {
        if let Ok(r) = proposal_recall(&proposals, overlap) {
            report.recall.insert(format!("{overlap}"), r);
        }
    }
    Ok(report)
}

/// Protocols without a single scorable query are left out of the report.
fn push_protocol(report: &mut EvalReport, name: &str, overlap: f64, results: Vec<(String, Option<f64>)>) -> Result<()> {
    if results.iter().any(|(_, ap)| ap.is_some()) {
        report.protocols.push(ProtocolReport::from_queries(name, overlap, results)?);
    }
    Ok(())
}

fn judged_ap(hits: &[ctrlf_core::Hit], gt: &[GtPage<'_>], label: &str, overlap: f64) -> Option<f64> {
    let (rel, total) = judge_results(hits, gt, label, overlap);
    (total > 0).then(|| average_precision(&rel, total))
}
