//! Deterministic synthetic manuscript corpus built from the stroke font and
//! page synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{full_page_synthesize, AugmentParams, LabeledWord};
use crate::error::{Error, Result};
use crate::glyphs::{render_word, GlyphStyle};
use crate::ingestion::Page;

const LEXICON: &[&str] = &[
    "the", "wife", "and", "of", "to", "in", "that", "his", "with", "for", "1609", "court", "county", "said",
    "land", "john", "paid", "sum", "by", "was", "letters", "general", "march", "army", "1757", "money",
    "he", "from", "order", "river", "ship", "company", "sent", "will", "it", "be", "day", "fort", "a", "men",
    "pounds", "service", "colonel", "return", "house", "regiment", "virginia", "orders", "i", "captain",
    "which", "town", "have", "12", "1775", "major", "shillings", "received", "governor", "officers",
];

/// The first `n` words of the built-in lexicon.
pub fn default_lexicon(n: usize) -> Result<Vec<String>> {
    if n == 0 || n > LEXICON.len() {
        return Err(Error::invalid(format!("lexicon size must be in 1..={}", LEXICON.len())));
    }
    Ok(LEXICON[..n].iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub pages: usize,
    /// The last `test_pages` pages are held out and use separately
    /// rendered word instances.
    pub test_pages: usize,
    pub lexicon_size: usize,
    /// Rendered instances of each word per split.
    pub renders_per_word: usize,
    pub augment: AugmentParams,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { pages: 30, test_pages: 5, lexicon_size: 40, renders_per_word: 24, augment: AugmentParams::default(), seed: 17 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub lexicon: Vec<String>,
    pub train: Vec<Page>,
    pub test: Vec<Page>,
}

fn render_pool(lexicon: &[String], per_word: usize, seed: u64) -> Result<Vec<LabeledWord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(lexicon.len() * per_word);
    for word in lexicon {
        for _ in 0..per_word {
            let style = GlyphStyle::random(&mut rng);
            out.push(LabeledWord { label: word.clone(), image: render_word(word, &style, &mut rng)? });
        }
    }
    Ok(out)
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<SyntheticCorpus> {
    if cfg.test_pages >= cfg.pages {
        return Err(Error::Config("corpus needs more pages than held-out pages".into()));
    }
    if cfg.renders_per_word == 0 {
        return Err(Error::Config("corpus needs at least one render per word".into()));
    }
    let lexicon = default_lexicon(cfg.lexicon_size)?;
    let train_pool = render_pool(&lexicon, cfg.renders_per_word, cfg.seed)?;
    let test_pool = render_pool(&lexicon, cfg.renders_per_word, cfg.seed ^ 0x7e57)?;
    let n_train = cfg.pages - cfg.test_pages;
    let pages = (0..cfg.pages)
        .into_par_iter()
        .map(|i| {
            let pool = if i < n_train { &train_pool } else { &test_pool };
            let mut page = full_page_synthesize(&format!("synth-{i:03}"), pool, &cfg.augment, cfg.seed.wrapping_add(1000 + i as u64))?;
            page.record.transcription = Some(page.record.words.iter().map(|w| w.label.clone()).collect());
            Ok(page)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pages = pages;
    let test = pages.split_off(n_train);
    Ok(SyntheticCorpus { lexicon, train: pages, test })
}
