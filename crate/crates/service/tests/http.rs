use std::collections::BTreeMap;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ctrlf_core::corpus::{generate_corpus, CorpusConfig};
use ctrlf_core::geometry::{iou, BBox};
use ctrlf_core::retrieval::{build_index, IndexConfig, IndexMeta, PageInput};
use ctrlf_core::{EmbeddingKind, Page, SpotIndex, SpotModel};
use ctrlf_service::http::{router, AppState, IndexSummary, PageEntry, PageImage, SearchResponse, SEARCH_TIME_HEADER};
use http_body_util::BodyExt;
use tower::ServiceExt;

struct Fixture {
    index: SpotIndex,
    pages: Vec<Page>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = generate_corpus(&CorpusConfig { pages: 3, test_pages: 1, lexicon_size: 8, renders_per_word: 2, ..CorpusConfig::default() })
            .unwrap();
        let mut model = SpotModel::new(EmbeddingKind::Dctow, 32, 8, 3);
        model.iterations = 1;
        let inputs: Vec<PageInput> = corpus.train.iter().map(|p| PageInput { id: p.id(), image: &p.image }).collect();
        let cfg = IndexConfig { wordness_threshold: 0.0, ..IndexConfig::default() };
        let meta = IndexMeta { model_id: model.id(), config_hash: "cafe".into() };
        Fixture { index: build_index(&inputs, &model, &cfg, meta).unwrap(), pages: corpus.train }
    })
}

fn app(with_index: bool, with_images: bool) -> Router {
    let f = fixture();
    let images: Option<BTreeMap<String, PageImage>> =
        with_images.then(|| f.pages.iter().map(|p| (p.id().to_string(), PageImage::encode(p).unwrap())).collect());
    router(AppState::new(with_index.then(|| f.index.clone()), images, 0.01), None)
}

async fn get(app: Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.oneshot(Request::get(uri).header("origin", "http://ui.example").body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    (status, headers, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn health_reports_ok() {
    let (status, _, body) = get(app(false, false), "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap(), serde_json::json!({"status": "ok"}));
}

#[tokio::test]
async fn search_returns_sorted_suppressed_results_with_timing() {
    let (status, headers, body) = get(app(true, false), "/api/search?q=wife&k=10").await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers.get(SEARCH_TIME_HEADER).unwrap().to_str().unwrap().parse::<f64>().unwrap() >= 0.0);
    assert_eq!(headers.get("access-control-allow-origin").unwrap(), "*");
    let resp: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((resp.query.as_str(), resp.k), ("wife", 10));
    assert!(!resp.results.is_empty() && resp.results.len() <= 10);
    assert!(resp.results.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    let corner = |r: &ctrlf_service::http::SearchResult| BBox::from_corners(r.bbox.x, r.bbox.y, r.bbox.x + r.bbox.w, r.bbox.y + r.bbox.h);
    for (i, a) in resp.results.iter().enumerate() {
        for b in &resp.results[i + 1..] {
            if a.page_id == b.page_id {
                assert!(iou(&corner(a), &corner(b)) <= 0.01);
            }
        }
    }
    assert_eq!(resp.index.config_hash, "cafe");
}

#[tokio::test]
async fn repeated_searches_are_byte_identical() {
    let (_, _, a) = get(app(true, false), "/api/search?q=the&k=7").await;
    let (_, _, b) = get(app(true, false), "/api/search?q=the&k=7").await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn search_defaults_to_twenty_results_and_filters_pages() {
    let (_, _, body) = get(app(true, false), "/api/search?q=the").await;
    let resp: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.k, 20);
    assert_eq!(resp.results.len(), 20);
    let page = &fixture().pages[1];
    let (status, _, body) = get(app(true, false), &format!("/api/search?q=the&page={}", page.id())).await;
    assert_eq!(status, StatusCode::OK);
    let resp: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert!(resp.results.iter().all(|r| r.page_id == page.id()));
}

#[tokio::test]
async fn search_validation_errors() {
    for (uri, code) in [
        ("/api/search?q=", StatusCode::BAD_REQUEST),
        ("/api/search", StatusCode::BAD_REQUEST),
        ("/api/search?q=%21%21", StatusCode::BAD_REQUEST),
        ("/api/search?q=the&k=0", StatusCode::BAD_REQUEST),
        ("/api/search?q=the&k=many", StatusCode::BAD_REQUEST),
        ("/api/search?q=the&page=nowhere", StatusCode::NOT_FOUND),
    ] {
        let (status, _, body) = get(app(true, false), uri).await;
        assert_eq!(status, code, "{uri}");
        assert!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["error"].is_string());
    }
}

#[tokio::test]
async fn missing_index_answers_503() {
    for uri in ["/api/search?q=the", "/api/pages", "/api/index/meta"] {
        assert_eq!(get(app(false, false), uri).await.0, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
}

#[tokio::test]
async fn pages_and_images() {
    let f = fixture();
    let (status, _, body) = get(app(true, true), "/api/pages").await;
    assert_eq!(status, StatusCode::OK);
    let pages: Vec<PageEntry> = serde_json::from_slice(&body).unwrap();
    assert_eq!(pages.len(), f.pages.len());
    assert_eq!(pages[0].width, Some(f.pages[0].image.width()));

    let (status, headers, png) = get(app(true, true), &format!("/api/pages/{}/image", f.pages[0].id())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers.get("content-type").unwrap(), "image/png");
    assert_eq!(&png[1..4], b"PNG");

    assert_eq!(get(app(true, true), "/api/pages/nowhere/image").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(app(true, false), "/api/pages/nowhere/image").await.0, StatusCode::NOT_FOUND);
    let uri = format!("/api/pages/{}/image", f.pages[0].id());
    assert_eq!(get(app(true, false), &uri).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn index_metadata() {
    let (status, _, body) = get(app(true, false), "/api/index/meta").await;
    assert_eq!(status, StatusCode::OK);
    let meta: IndexSummary = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta, IndexSummary::from(&fixture().index));
    assert_eq!(meta.dim, 108);
}

#[tokio::test]
async fn cors_can_be_pinned_to_one_origin() {
    let app = router(AppState::new(None, None, 0.01), Some("http://ui.example"));
    let (_, headers, _) = get(app, "/health").await;
    assert_eq!(headers.get("access-control-allow-origin").unwrap(), "http://ui.example");
}
