use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctrlf_core::corpus::{generate_corpus, CorpusConfig};
use ctrlf_core::ingestion::{load_manifest, prepare_pages, save_manifest, write_png};
use ctrlf_core::neural::train;
use ctrlf_core::retrieval::{build_index, IndexMeta, PageInput};
use ctrlf_core::{Page, RunConfig, SpotIndex, SpotModel};
use serde_json::json;

use crate::eval::evaluate;
use crate::http::{router, search, AppState, PageImage, DEFAULT_K};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8170";

#[derive(Debug, Parser)]
#[command(name = "ctrlf", version, about = "Segmentation-free word spotting in page images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic annotated corpus with train/test manifests and a run config.
    Synth(SynthArgs),
    /// Train the embedding and wordness heads on an annotated manifest.
    Train(TrainArgs),
    /// Propose, score and describe regions of every page in a manifest.
    Index(IndexArgs),
    /// Run one string query and print the ranked regions as JSON.
    Search(SearchArgs),
    /// Report MAP and proposal recall for an index against its annotations.
    Eval(EvalArgs),
    /// Serve the search API over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub pages: usize,
    #[arg(long, default_value_t = 5)]
    pub test_pages: usize,
    #[arg(long, default_value_t = 40)]
    pub lexicon: usize,
    /// Rendered instances of each word per split.
    #[arg(long, default_value_t = 24)]
    pub renders: usize,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index path to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_k)]
    pub k: usize,
    /// Restrict the search to these pages.
    #[arg(long = "page")]
    pub pages: Vec<String>,
    /// When given, must match the configuration the index was built with.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Enables the query-by-example protocol.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "overlap", default_values_t = [0.25, 0.5])]
    pub overlaps: Vec<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Pages whose images are served to the UI.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "CTRLF_ADDR", default_value = DEFAULT_ADDR)]
    pub addr: String,
}

fn parse_k(raw: &str) -> std::result::Result<usize, String> {
    match raw.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err(format!("expected a positive integer, got {raw:?}")),
    }
}

/// Settings that suit the synthetic corpus: small pages need no resizing and
/// every training page is used for fitting.
pub fn synthetic_run_config() -> RunConfig {
    let mut cfg = RunConfig { resize_pages: false, ..RunConfig::default() };
    cfg.train.hidden = 512;
    cfg.train.iterations = 4000;
    cfg.train.val_pages = 0;
    cfg.train.val_every = 250;
    cfg
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_pages(manifest: &Path, cfg: &RunConfig) -> Result<Vec<Page>> {
    let records = load_manifest(manifest)?;
    if records.is_empty() {
        bail!("manifest {} lists no pages", manifest.display());
    }
    Ok(prepare_pages(&records, cfg)?)
}

fn load_index(path: &Path) -> Result<SpotIndex> {
    SpotIndex::load(path).with_context(|| format!("loading index {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = CorpusConfig {
        pages: a.pages,
        test_pages: a.test_pages,
        lexicon_size: a.lexicon,
        renders_per_word: a.renders,
        seed: a.seed,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    for (split, pages) in [("train", &corpus.train), ("test", &corpus.test)] {
        let dir = a.out.join(split);
        std::fs::create_dir_all(dir.join("images"))?;
        let mut records = Vec::with_capacity(pages.len());
        for p in pages.iter() {
            let image = dir.join("images").join(format!("{}.png", p.id()));
            write_png(&p.image, &image)?;
            records.push(ctrlf_core::PageRecord { image, ..p.record.clone() });
        }
        save_manifest(dir.join("manifest.json"), &records)?;
    }
    synthetic_run_config().save(a.out.join("config.toml"))?;
    print_json(&json!({
        "out": a.out,
        "train_pages": corpus.train.len(),
        "test_pages": corpus.test.len(),
        "lexicon": corpus.lexicon,
    }))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.train.iterations = a.iterations.unwrap_or(cfg.train.iterations);
    cfg.train.hidden = a.hidden.unwrap_or(cfg.train.hidden);
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    let pages = load_pages(&a.manifest, &cfg)?;
    let out = train(cfg.embedding, &pages, &cfg.train, &cfg.index_config(), &cfg.augment)?;
    out.model.save(&a.out).with_context(|| format!("writing model {}", a.out.display()))?;
    let tail = &out.losses[out.losses.len().saturating_sub(50)..];
    print_json(&json!({
        "model": a.out,
        "model_id": out.model.id(),
        "iterations": out.model.iterations,
        "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        "validation": out.validation,
    }))
}

fn index_cmd(a: &IndexArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let model = SpotModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let pages = load_pages(&a.manifest, &cfg)?;
    let inputs: Vec<PageInput> = pages.iter().map(|p| PageInput { id: p.id(), image: &p.image }).collect();
    let meta = IndexMeta { model_id: model.id(), config_hash: cfg.hash() };
    let index = build_index(&inputs, &model, &cfg.index_config(), meta)?;
    index.save(&a.out).with_context(|| format!("writing index {}", a.out.display()))?;
    print_json(&crate::http::IndexSummary::from(&index))
}

fn search_cmd(a: &SearchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let query_nms = match &a.config {
        Some(p) => {
            let cfg = load_config(Some(p))?;
            index.check_config_hash(&cfg.hash())?;
            cfg.thresholds.query_nms
        }
        None => RunConfig::default().thresholds.query_nms,
    };
    let pages = (!a.pages.is_empty()).then(|| a.pages.clone());
    if let Some(missing) = a.pages.iter().find(|p| index.page(p).is_none()) {
        bail!("page {missing:?} is not in the index");
    }
    print_json(&search(&index, &a.query, a.k, pages, query_nms)?)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let index = load_index(&a.index)?;
    index.check_config_hash(&cfg.hash())?;
    let model = match &a.model {
        Some(p) => Some(SpotModel::load(p).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    if let Some(o) = a.overlaps.iter().find(|o| !(**o > 0.0 && **o <= 1.0)) {
        bail!("overlap {o} must lie in (0, 1]");
    }
    let pages = load_pages(&a.manifest, &cfg)?;
    let report = evaluate(&index, &pages, model.as_ref(), &a.overlaps, &cfg)?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            let summary: Vec<_> =
                report.protocols.iter().map(|p| json!({ "protocol": p.protocol, "overlap": p.overlap, "map": p.map })).collect();
            print_json(&json!({ "report": path, "map": summary, "recall": report.recall }))
        }
        None => print_json(&report),
    }
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let index = match &a.index {
        Some(p) => {
            let index = load_index(p)?;
            if a.config.is_some() {
                index.check_config_hash(&cfg.hash())?;
            }
            Some(index)
        }
        None => {
            log::warn!("no index given; search endpoints will answer 503");
            None
        }
    };
    let images = match &a.manifest {
        Some(m) => {
            let pages = load_pages(m, &cfg)?;
            let encoded = pages
                .iter()
                .map(|p| Ok((p.id().to_string(), PageImage::encode(p)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Some(encoded)
        }
        None => None,
    };
    let state = AppState::new(index, images, cfg.thresholds.query_nms);
    let origin = std::env::var("CTRLF_UI_ORIGIN").ok();
    let app = router(state, origin.as_deref());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}
