//! HTTP search API consumed by the browser front end.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ctrlf_core::embeddings::normalize_label;
use ctrlf_core::ingestion::encode_png;
use ctrlf_core::retrieval::{query_by_string_with, QueryOptions};
use ctrlf_core::{EmbeddingKind, Hit, Page, SpotIndex};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const SEARCH_TIME_HEADER: &str = "x-search-time-ms";
pub const DEFAULT_K: usize = 20;

/// An encoded page image in index coordinates.
#[derive(Debug, Clone)]
pub struct PageImage {
    pub width: usize,
    pub height: usize,
    pub png: Vec<u8>,
}

impl PageImage {
    pub fn encode(page: &Page) -> ctrlf_core::Result<Self> {
        Ok(Self { width: page.image.width(), height: page.image.height(), png: encode_png(&page.image)? })
    }
}

#[derive(Debug, Clone, Default)]
pub struct AppState {
    pub index: Option<Arc<SpotIndex>>,
    pub images: Option<Arc<BTreeMap<String, PageImage>>>,
    pub query_nms: f64,
}

impl AppState {
    pub fn new(index: Option<SpotIndex>, images: Option<BTreeMap<String, PageImage>>, query_nms: f64) -> Self {
        Self { index: index.map(Arc::new), images: images.map(Arc::new), query_nms }
    }
}

/// Corner-form box as drawn by the front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub page_id: String,
    #[serde(rename = "box")]
    pub bbox: CornerBox,
    pub similarity: f64,
}

impl From<&Hit> for SearchResult {
    fn from(h: &Hit) -> Self {
        let [x0, y0, ..] = h.bbox.corners();
        Self { page_id: h.page_id.clone(), bbox: CornerBox { x: x0, y: y0, w: h.bbox.w, h: h.bbox.h }, similarity: h.similarity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub embedding: EmbeddingKind,
    pub dim: usize,
    pub pages: usize,
    pub proposals: usize,
    pub model_id: String,
    pub config_hash: String,
}

impl From<&SpotIndex> for IndexSummary {
    fn from(idx: &SpotIndex) -> Self {
        Self {
            embedding: idx.kind,
            dim: idx.dim,
            pages: idx.pages.len(),
            proposals: idx.proposal_count(),
            model_id: idx.meta.model_id.clone(),
            config_hash: idx.meta.config_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub k: usize,
    pub results: Vec<SearchResult>,
    pub index: IndexSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEntry {
    pub id: String,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: Option<String>,
    k: Option<String>,
    /// Comma-separated page ids.
    page: Option<String>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn unavailable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, msg.into())
}

fn loaded_index(state: &AppState) -> Result<Arc<SpotIndex>, ApiError> {
    state.index.clone().ok_or_else(|| unavailable("no index loaded"))
}

/// Runs a string query; shared by the HTTP handler and the CLI.
pub fn search(idx: &SpotIndex, query: &str, k: usize, pages: Option<Vec<String>>, query_nms: f64) -> ctrlf_core::Result<SearchResponse> {
    let opts = QueryOptions { k, nms_overlap: query_nms, pages };
    let hits = query_by_string_with(idx, query, &opts)?;
    Ok(SearchResponse {
        query: normalize_label(query),
        k,
        results: hits.iter().map(SearchResult::from).collect(),
        index: IndexSummary::from(idx),
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn search_handler(State(state): State<AppState>, Query(params): Query<SearchParams>) -> Result<Response, ApiError> {
    let idx = loaded_index(&state)?;
    let query = params.q.unwrap_or_default();
    if normalize_label(&query).is_empty() {
        return Err(bad_request("query is empty after normalization"));
    }
    let k = match params.k.as_deref() {
        None | Some("") => DEFAULT_K,
        Some(raw) => match raw.parse::<usize>() {
            Ok(k) if k >= 1 => k,
            _ => return Err(bad_request(format!("k must be a positive integer, got {raw:?}"))),
        },
    };
    let pages = match params.page.as_deref().filter(|p| !p.is_empty()) {
        None => None,
        Some(list) => {
            let ids: Vec<String> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            if let Some(missing) = ids.iter().find(|id| idx.page(id).is_none()) {
                return Err(not_found(format!("unknown page {missing:?}")));
            }
            Some(ids)
        }
    };
    let started = Instant::now();
    let nms = state.query_nms;
    let response = tokio::task::spawn_blocking(move || search(&idx, &query, k, pages, nms))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| bad_request(e.to_string()))?;
    let elapsed = format!("{:.3}", started.elapsed().as_secs_f64() * 1000.0);
    let mut resp = Json(response).into_response();
    resp.headers_mut().insert(SEARCH_TIME_HEADER, HeaderValue::from_str(&elapsed).expect("ascii"));
    Ok(resp)
}

async fn pages_handler(State(state): State<AppState>) -> Result<Json<Vec<PageEntry>>, ApiError> {
    let idx = loaded_index(&state)?;
    let entries = idx
        .pages
        .iter()
        .map(|p| {
            let img = state.images.as_ref().and_then(|m| m.get(&p.page_id));
            PageEntry { id: p.page_id.clone(), width: img.map(|i| i.width), height: img.map(|i| i.height) }
        })
        .collect();
    Ok(Json(entries))
}

async fn page_image_handler(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match (&state.images, &state.index) {
        (Some(images), _) => match images.get(&id) {
            Some(img) => Ok(([(header::CONTENT_TYPE, "image/png")], img.png.clone()).into_response()),
            None => Err(not_found(format!("unknown page {id:?}"))),
        },
        (None, Some(idx)) if idx.page(&id).is_some() => Err(unavailable("page images are not loaded")),
        _ => Err(not_found(format!("unknown page {id:?}"))),
    }
}

async fn meta_handler(State(state): State<AppState>) -> Result<Json<IndexSummary>, ApiError> {
    Ok(Json(IndexSummary::from(loaded_index(&state)?.as_ref())))
}

/// Cross-origin access for the UI: `ui_origin` of `None` or `"*"` allows any
/// origin.
pub fn router(state: AppState, ui_origin: Option<&str>) -> Router {
    let origin = match ui_origin {
        None | Some("*") => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET])
        .expose_headers([HeaderName::from_static(SEARCH_TIME_HEADER)]);
    Router::new()
        .route("/health", get(health))
        .route("/api/search", get(search_handler))
        .route("/api/pages", get(pages_handler))
        .route("/api/pages/{id}/image", get(page_image_handler))
        .route("/api/index/meta", get(meta_handler))
        .layer(cors)
        .with_state(state)
}
