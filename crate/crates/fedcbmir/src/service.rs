//! Read-only HTTP/JSON query service over one model and one index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::{Multipart, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fedcbmir_core::cae::CaeModel;
use fedcbmir_core::retrieval::{search, FeatureIndex, RetrievalResult, Scenario};
use fedcbmir_core::{Error as CoreError, Label, Magnification};
use serde::Serialize;

use crate::data::decode_image;
use crate::error::{AppError, Result};
use crate::files::{load_index, load_model};
use crate::net::SystemClock;

pub const MAX_K: usize = 50;

pub struct Loaded {
    pub model: CaeModel<f32>,
    pub index: FeatureIndex,
    /// Indexed id to image file, for thumbnails.
    pub thumbnails: HashMap<String, PathBuf>,
}

impl Loaded {
    pub fn new(model: CaeModel<f32>, index: FeatureIndex, data_root: Option<&Path>) -> Result<Self> {
        index.check_layout(model.layout_id())?;
        let thumbnails = match data_root {
            Some(root) => scan_thumbnails(root, &index),
            None => HashMap::new(),
        };
        Ok(Loaded {
            model,
            index,
            thumbnails,
        })
    }

    pub fn from_files(model: &Path, index: &Path, data_root: Option<&Path>) -> Result<Self> {
        Loaded::new(load_model(model)?, load_index(index)?, data_root)
    }
}

/// Image files under `root` whose stem is an indexed id; first match wins
/// in sorted path order.
fn scan_thumbnails(root: &Path, index: &FeatureIndex) -> HashMap<String, PathBuf> {
    let ids: HashSet<&str> = index.entries().iter().map(|e| e.meta.id.as_str()).collect();
    let mut out = HashMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(read) = std::fs::read_dir(&dir) else { continue };
        let mut entries: Vec<PathBuf> = read.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries.into_iter().rev() {
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let ext_ok = matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "ppm" | "pgm")
            );
            if let (true, Some(stem)) = (ext_ok, p.file_stem().and_then(|s| s.to_str())) {
                if ids.contains(stem) {
                    out.entry(stem.to_string()).or_insert(p);
                }
            }
        }
    }
    out
}

#[derive(Default)]
pub struct ServiceState {
    loaded: OnceLock<Loaded>,
    errors: AtomicU64,
}

impl ServiceState {
    pub fn new() -> Arc<Self> {
        Arc::new(ServiceState::default())
    }

    /// Makes the model and index visible. Later calls are ignored.
    pub fn install(&self, loaded: Loaded) {
        let _ = self.loaded.set(loaded);
    }

    pub fn loaded(&self) -> Option<&Loaded> {
        self.loaded.get()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/index/stats", get(stats))
        .route("/query", post(query))
        .route("/thumbnails/:id", get(thumbnail))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into(), id: None })).into_response()
}

fn not_loaded() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "model and index are still loading")
}

async fn healthz(State(s): State<Arc<ServiceState>>) -> Response {
    match s.loaded() {
        Some(l) => Json(serde_json::json!({
            "status": "ok",
            "version": env!("CARGO_PKG_VERSION"),
            "layout_id": l.model.layout_id().to_string(),
        }))
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "loading", "version": env!("CARGO_PKG_VERSION") })),
        )
            .into_response(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct IndexStats {
    pub entries: usize,
    pub per_label: BTreeMap<String, usize>,
    pub per_magnification: BTreeMap<String, usize>,
    pub layout_id: String,
}

pub fn index_stats(index: &FeatureIndex) -> IndexStats {
    let mut per_label = BTreeMap::new();
    let mut per_magnification = BTreeMap::new();
    for e in index.entries() {
        *per_label.entry(e.meta.label.as_str().to_string()).or_insert(0) += 1;
        *per_magnification
            .entry(Magnification::label_opt(e.meta.magnification).to_string())
            .or_insert(0) += 1;
    }
    IndexStats {
        entries: index.len(),
        per_label,
        per_magnification,
        layout_id: index.layout_id().to_string(),
    }
}

async fn stats(State(s): State<Arc<ServiceState>>) -> Response {
    match s.loaded() {
        Some(l) => Json(index_stats(&l.index)).into_response(),
        None => not_loaded(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HitJson {
    pub entry_id: String,
    pub position: usize,
    pub distance: f64,
    pub label: String,
    pub magnification: String,
    pub center: String,
    pub thumbnail_url: Option<String>,
    #[serde(rename = "match")]
    pub matches: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GroupJson {
    pub magnification: String,
    pub hits: Vec<HitJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct QueryResponse {
    pub query_id: String,
    pub scenario: String,
    pub k: usize,
    pub grouped: bool,
    pub elapsed_secs: f64,
    pub groups: Vec<GroupJson>,
    /// All hits in group order.
    pub hits: Vec<HitJson>,
}

impl QueryResponse {
    pub fn from_result(r: &RetrievalResult, k: usize, true_label: Option<Label>, loaded: &Loaded) -> Self {
        let groups: Vec<GroupJson> = r
            .groups
            .iter()
            .map(|g| GroupJson {
                magnification: Magnification::label_opt(g.magnification).to_string(),
                hits: g
                    .hits
                    .iter()
                    .map(|h| HitJson {
                        entry_id: h.entry_id.clone(),
                        position: h.position,
                        distance: h.distance,
                        label: h.label.as_str().to_string(),
                        magnification: Magnification::label_opt(h.magnification).to_string(),
                        center: h.center.clone(),
                        thumbnail_url: loaded
                            .thumbnails
                            .contains_key(&h.entry_id)
                            .then(|| format!("/thumbnails/{}", h.entry_id)),
                        matches: true_label.map(|l| l == h.label),
                    })
                    .collect(),
            })
            .collect();
        QueryResponse {
            query_id: r.query_id.clone(),
            scenario: r.scenario.as_str().to_string(),
            k,
            grouped: r.scenario == Scenario::Sen2,
            elapsed_secs: r.elapsed_secs,
            hits: groups.iter().flat_map(|g| g.hits.iter().cloned()).collect(),
            groups,
        }
    }
}

/// Parsed form fields of `POST /query`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub query_id: String,
    pub image: Vec<u8>,
    pub k: usize,
    pub scenario: Scenario,
    pub magnification: Option<Magnification>,
    pub true_label: Option<Label>,
}

/// Decodes the image at the model's input size and runs the library search.
pub fn run_query(loaded: &Loaded, req: &QueryRequest) -> Result<RetrievalResult> {
    let cfg = loaded.model.config();
    let image = decode_image(&req.image, Some((cfg.height, cfg.width))).map_err(|reason| AppError::Image {
        path: PathBuf::from("<upload>"),
        reason,
    })?;
    Ok(search(
        &loaded.index,
        &loaded.model,
        &req.query_id,
        &image,
        req.k,
        req.scenario,
        req.magnification,
        &SystemClock::default(),
    )?)
}

async fn read_request(mut form: Multipart) -> std::result::Result<QueryRequest, String> {
    let mut image = None;
    let mut fields: HashMap<String, String> = HashMap::new();
    while let Some(field) = form.next_field().await.map_err(|e| e.to_string())? {
        let name = field.name().unwrap_or("").to_string();
        if name == "image" {
            image = Some(field.bytes().await.map_err(|e| e.to_string())?.to_vec());
        } else {
            fields.insert(name, field.text().await.map_err(|e| e.to_string())?);
        }
    }
    let image = image.ok_or("missing `image` field")?;
    let k = match fields.get("k") {
        Some(v) => v.trim().parse::<usize>().map_err(|_| format!("bad k {v:?}"))?,
        None => 5,
    };
    if !(1..=MAX_K).contains(&k) {
        return Err(format!("k must be in 1..={MAX_K}"));
    }
    let scenario = match fields.get("scenario") {
        Some(v) => v.parse::<Scenario>().map_err(|e| e.to_string())?,
        None => Scenario::Sen1,
    };
    let magnification = match fields.get("magnification") {
        Some(v) => Magnification::parse_opt(v).map_err(|e| e.to_string())?,
        None => None,
    };
    let true_label = match fields.get("true_label").map(|s| s.trim()).filter(|s| !s.is_empty()) {
        Some(v) => Some(v.parse::<Label>().map_err(|e| e.to_string())?),
        None => None,
    };
    Ok(QueryRequest {
        query_id: fields.get("query_id").cloned().unwrap_or_else(|| "query".into()),
        image,
        k,
        scenario,
        magnification,
        true_label,
    })
}

async fn query(State(s): State<Arc<ServiceState>>, form: Multipart) -> Response {
    if s.loaded().is_none() {
        return not_loaded();
    }
    let req = match read_request(form).await {
        Ok(r) => r,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    };
    let state = Arc::clone(&s);
    let outcome = tokio::task::spawn_blocking(move || {
        let loaded = state.loaded().expect("checked above");
        run_query(loaded, &req).map(|r| QueryResponse::from_result(&r, req.k, req.true_label, loaded))
    })
    .await;
    match outcome {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => map_error(&s, e),
        Err(join) => map_error(&s, AppError::Config(join.to_string())),
    }
}

fn map_error(s: &ServiceState, e: AppError) -> Response {
    match &e {
        AppError::Image { .. } => error(StatusCode::BAD_REQUEST, e.to_string()),
        AppError::Core(CoreError::EmptyPartition(_)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        AppError::Core(CoreError::Contract(_) | CoreError::Config(_) | CoreError::Dimension { .. }) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        _ => {
            let id = format!("e{:06}", s.errors.fetch_add(1, Ordering::Relaxed));
            eprintln!("internal error {id}: {e}");
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(ErrorBody {
                    error: "internal error".into(),
                    id: Some(id),
                }),
            )
                .into_response()
        }
    }
}

async fn thumbnail(State(s): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(l) = s.loaded() else { return not_loaded() };
    let Some(path) = l.thumbnails.get(&id) else {
        return error(StatusCode::NOT_FOUND, "no thumbnail for that id");
    };
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/x-portable-anymap",
    };
    match std::fs::read(path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "thumbnail unreadable"),
    }
}
