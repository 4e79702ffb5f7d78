use std::sync::OnceLock;

use ctrlf_core::augmentation::{full_page_synthesize, AugmentParams, LabeledWord};
use ctrlf_core::corpus::{generate_corpus, CorpusConfig, SyntheticCorpus};
use ctrlf_core::dtp::dtp_proposals;
use ctrlf_core::embeddings::embed_query;
use ctrlf_core::geometry::{iou, BBox};
use ctrlf_core::glyphs::{render_word, GlyphStyle};
use ctrlf_core::neural::{build_training_set, train, TrainConfig, Trainer};
use ctrlf_core::retrieval::{
    build_index, index_page, query_by_example, query_by_string_with, query_descriptor, IndexConfig, IndexMeta,
    PageInput, Proposal, QueryOptions,
};
use ctrlf_core::{EmbeddingKind, RunConfig, SpotIndex, SpotModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Trained {
    corpus: SyntheticCorpus,
    model: SpotModel,
    index: SpotIndex,
    cfg: IndexConfig,
}

fn small_train_config() -> TrainConfig {
    TrainConfig { hidden: 128, iterations: 3000, val_pages: 0, ..TrainConfig::default() }
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let augment = AugmentParams { words_per_page: 20, ..AugmentParams::default() };
        let corpus = generate_corpus(&CorpusConfig {
            pages: 10,
            test_pages: 2,
            lexicon_size: 12,
            renders_per_word: 8,
            augment: augment.clone(),
            seed: 3,
        })
        .unwrap();
        let run = RunConfig::default();
        let cfg = run.index_config();
        let model = train(EmbeddingKind::Dctow, &corpus.train, &small_train_config(), &cfg, &augment).unwrap().model;
        let pages: Vec<PageInput> = corpus.test.iter().map(|p| PageInput { id: p.id(), image: &p.image }).collect();
        let meta = IndexMeta { model_id: model.id(), config_hash: run.hash() };
        let index = build_index(&pages, &model, &cfg, meta).unwrap();
        Trained { corpus, model, index, cfg }
    })
}

fn stored_covers(stored: &[Proposal], target: &BBox) -> bool {
    stored.iter().any(|p| iou(&p.bbox, target) >= 0.5)
}

#[test]
fn every_word_of_a_clean_page_is_covered_by_a_stored_proposal() {
    let t = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let words: Vec<LabeledWord> = t
        .corpus
        .lexicon
        .iter()
        .map(|l| LabeledWord { label: l.clone(), image: render_word(l, &GlyphStyle::random(&mut rng), &mut rng).unwrap() })
        .collect();
    let params = AugmentParams { words_per_page: 20, ..AugmentParams::identity() };
    let page = full_page_synthesize("clean", &words, &params, 4).unwrap();
    assert_eq!(page.words().len(), 20);
    let stored = index_page(
        &t.model,
        PageInput { id: page.id(), image: &page.image },
        &t.cfg,
        &dtp_proposals(&page.image, &t.cfg.dtp).unwrap(),
    )
    .unwrap();
    for w in page.words() {
        assert!(stored_covers(&stored.proposals, &w.bbox), "{} at {:?} is not covered", w.label, w.bbox);
    }
}

#[test]
fn augmented_pages_are_almost_fully_covered() {
    let t = trained();
    let (mut covered, mut total) = (0, 0);
    for page in &t.corpus.test {
        let stored = &t.index.page(page.id()).unwrap().proposals;
        total += page.words().len();
        covered += page.words().iter().filter(|w| stored_covers(stored, &w.bbox)).count();
    }
    assert!(covered as f64 >= 0.95 * total as f64, "{covered}/{total} words covered");
}

#[test]
fn filtering_only_removes_proposals() {
    let t = trained();
    for page in &t.corpus.test {
        let raw = dtp_proposals(&page.image, &t.cfg.dtp).unwrap();
        let stored = index_page(&t.model, PageInput { id: page.id(), image: &page.image }, &t.cfg, &raw).unwrap();
        assert!(stored.proposals.len() <= raw.len());
        assert!(stored.proposals.iter().all(|p| raw.contains(&p.bbox)));
    }
}

#[test]
fn string_queries_find_a_true_box_first() {
    let t = trained();
    for page in &t.corpus.test {
        for w in page.words() {
            let top = &query_by_string_with(&t.index, &w.label, &QueryOptions::top(1)).unwrap()[0];
            let hit_page = t.corpus.test.iter().find(|p| p.id() == top.page_id).unwrap();
            let ok = hit_page.words().iter().any(|g| g.label == w.label && iou(&g.bbox, &top.bbox) >= 0.5);
            assert!(ok, "query {:?} ranked {:?} on {} first", w.label, top.bbox, top.page_id);
        }
    }
}

#[test]
fn example_queries_retrieve_their_own_region() {
    let t = trained();
    for page in &t.corpus.test {
        for p in t.index.page(page.id()).unwrap().proposals.iter().step_by(7) {
            let hits = query_by_example(&t.index, &t.model, &page.image, &p.bbox, &QueryOptions::top(1)).unwrap();
            assert_eq!(hits[0].page_id, page.id());
            assert_eq!(hits[0].bbox, p.bbox);
            assert!(hits[0].similarity >= 0.99, "self similarity {}", hits[0].similarity);
        }
    }
}

#[test]
fn example_and_string_queries_share_the_ranking_path() {
    let t = trained();
    let opts = QueryOptions::top(15);
    let label = &t.corpus.test[0].words()[0].label;
    let by_string = query_by_string_with(&t.index, label, &opts).unwrap();
    let direct = query_descriptor(&t.index, &embed_query(t.index.kind, label).unwrap(), &opts).unwrap();
    assert_eq!(by_string, direct);

    let page = &t.corpus.test[1];
    let bbox = page.words()[3].bbox;
    let by_example = query_by_example(&t.index, &t.model, &page.image, &bbox, &opts).unwrap();
    let desc = t.model.embed_region(&page.image, &bbox).unwrap();
    assert_eq!(by_example, query_descriptor(&t.index, &desc, &opts).unwrap());
}

#[test]
fn example_queries_reject_a_foreign_model() {
    let t = trained();
    let page = &t.corpus.test[0];
    let mut other = SpotModel::new(EmbeddingKind::Dctow, 16, 4, 99);
    other.iterations = 1;
    let index = build_index(
        &[PageInput { id: page.id(), image: &page.image }],
        &t.model,
        &t.cfg,
        IndexMeta { model_id: t.model.id(), config_hash: String::new() },
    )
    .unwrap();
    assert!(query_by_example(&index, &other, &page.image, &page.words()[0].bbox, &QueryOptions::top(3)).is_err());
}

fn tiny_corpus(lexicon_size: usize, pages: usize) -> SyntheticCorpus {
    generate_corpus(&CorpusConfig {
        pages,
        test_pages: 0,
        lexicon_size,
        renders_per_word: 4,
        augment: AugmentParams { words_per_page: 12, ..AugmentParams::default() },
        seed: 11,
    })
    .unwrap()
}

#[test]
fn training_is_reproducible() {
    let corpus = tiny_corpus(6, 3);
    let run = RunConfig::default();
    let cfg = TrainConfig { hidden: 32, iterations: 40, val_pages: 1, val_every: 20, ..TrainConfig::default() };
    let once = || train(EmbeddingKind::Phoc, &corpus.train, &cfg, &run.index_config(), &run.augment).unwrap();
    let (a, b) = (once(), once());
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.validation, b.validation);
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
}

#[test]
fn loss_on_a_fixed_minibatch_decreases_for_ten_steps() {
    let corpus = tiny_corpus(8, 3);
    let run = RunConfig::default();
    let cfg = TrainConfig { hidden: 64, seed: 7, ..TrainConfig::default() };
    let data = build_training_set(EmbeddingKind::Dctow, &corpus.train, &cfg, &run.dtp, &run.augment).unwrap();
    let mut trainer = Trainer::new(EmbeddingKind::Dctow, data, &cfg).unwrap();
    let batch = trainer.sample_batch();
    let losses: Vec<f64> = (0..11).map(|_| trainer.step(&batch).unwrap().total).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went from {} to {}", w[0], w[1]);
    }
}

#[test]
fn a_single_word_class_validates_perfectly() {
    let corpus = tiny_corpus(1, 3);
    let run = RunConfig::default();
    let cfg = TrainConfig { hidden: 64, iterations: 300, val_pages: 1, val_every: 100, ..TrainConfig::default() };
    let out = train(EmbeddingKind::Dctow, &corpus.train, &cfg, &run.index_config(), &run.augment).unwrap();
    let (_, last) = *out.validation.last().unwrap();
    assert_eq!(last, 1.0, "validation history {:?}", out.validation);
}

