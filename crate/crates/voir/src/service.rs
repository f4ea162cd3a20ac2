//! HTTP API over a loaded catalog with in-memory sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use voir_core::catalog::Origin;
use voir_core::feedback::{Judgment, Polarity, SessionConfig, SessionState};
use voir_core::similarity::RankedResult;
use voir_core::{BoundingBox, Catalog, ImageId, Mode, RegionId, TermId};

use crate::journal::{Journal, JournalEntry};

pub const DEFAULT_K: usize = 10;

pub struct AppState {
    catalog: RwLock<Catalog>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<SessionState>>>>,
    next_session: AtomicU64,
    default_mode: Mode,
    journal: Option<Mutex<Journal>>,
    media_dir: Option<PathBuf>,
}

#[derive(Default)]
pub struct ServiceOptions {
    pub default_mode: Option<Mode>,
    pub journal: Option<Journal>,
    /// Holds `thumbnails/<image id>.png` and `crops/<region id>.png`.
    pub media_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(catalog: Catalog, options: ServiceOptions) -> Arc<Self> {
        Arc::new(AppState {
            catalog: RwLock::new(catalog),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            default_mode: options.default_mode.unwrap_or(Mode::Voir3),
            journal: options.journal.map(Mutex::new),
            media_dir: options.media_dir,
        })
    }

    fn journal(&self, entry: JournalEntry) -> Result<(), ApiError> {
        if let Some(j) = &self.journal {
            j.lock().expect("journal lock").append(&entry).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(())
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<SessionState>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/thesaurus", get(thesaurus))
        .route("/api/terms/{id}/examples", get(term_examples))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/results", get(session_results))
        .route("/api/sessions/{id}/feedback", post(session_feedback))
        .route("/api/images/{id}/thumbnail", get(thumbnail))
        .route("/api/regions/{id}/crop", get(crop))
        .route("/api/associations", post(create_association))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

// ---- errors

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: &'static str,
    message: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: ErrorDetail { code: self.code, message: self.message } })).into_response()
    }
}

impl From<voir_core::Error> for ApiError {
    fn from(e: voir_core::Error) -> Self {
        use voir_core::Error as E;
        let (status, code) = match &e {
            E::UnknownTerm(_) | E::UnknownRegion(_) | E::UnknownImage(_) | E::UnknownCategory(_) | E::UnknownKey(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            E::ModeViolation { .. } => (StatusCode::CONFLICT, "mode_violation"),
            E::Conflict(_) | E::DuplicateKey(_) => (StatusCode::CONFLICT, "conflict"),
            E::Precondition(_) => (StatusCode::CONFLICT, "precondition_failed"),
            E::Integrity(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

// ---- payloads

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermNode {
    pub id: TermId,
    pub label: String,
    pub children: Vec<TermNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThesaurusResponse {
    pub roots: Vec<TermNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleItem {
    pub region_id: RegionId,
    pub image_id: ImageId,
    pub d_conf: u8,
    pub origin: Origin,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplesResponse {
    pub term_id: TermId,
    pub examples: Vec<ExampleItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRequest {
    pub term_id: TermId,
    pub example_region_id: RegionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub concepts: Vec<ConceptRequest>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRegion {
    pub region_id: RegionId,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub term_id: TermId,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_region_id: Option<RegionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_region: Option<BestRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub rank: usize,
    pub image_id: ImageId,
    pub image_key: String,
    pub score: f64,
    pub concepts: Vec<ConceptScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsResponse {
    pub session_id: u64,
    pub mode: Mode,
    pub iteration: u64,
    pub results: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRequest {
    #[serde(default)]
    pub region_id: Option<RegionId>,
    #[serde(default)]
    pub image_id: Option<ImageId>,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub judgments: Vec<JudgmentRequest>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsQuery {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationRequest {
    pub term_id: TermId,
    pub region_id: RegionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResponse {
    pub term_id: TermId,
    pub region_id: RegionId,
    pub d_conf: u8,
    pub origin: Origin,
}

fn results_payload(catalog: &Catalog, session: &SessionState, k: Option<usize>) -> ApiResult<ResultsResponse> {
    let k = k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let ranked: Vec<RankedResult> = session.results(catalog, k)?;
    let mut results = Vec::with_capacity(ranked.len());
    for (i, r) in ranked.into_iter().enumerate() {
        let concepts = r
            .concepts
            .into_iter()
            .map(|c| {
                let best_region = match c.best_region_id {
                    Some(id) => Some(BestRegion { region_id: id, bbox: catalog.region(id)?.bbox }),
                    None => None,
                };
                Ok(ConceptScore { term_id: c.term_id, score: c.score, best_region_id: c.best_region_id, best_region })
            })
            .collect::<voir_core::Result<_>>()?;
        results.push(ResultItem {
            rank: i + 1,
            image_id: r.image_id,
            image_key: catalog.image(r.image_id)?.key.clone(),
            score: r.image_score,
            concepts,
        });
    }
    Ok(ResultsResponse { session_id: session.session_id, mode: session.mode, iteration: session.iteration, results })
}

// ---- handlers

async fn thesaurus(State(state): State<Arc<AppState>>) -> ApiResult<Json<ThesaurusResponse>> {
    let catalog = state.catalog.read().expect("catalog lock");
    let th = catalog.thesaurus();
    fn node(th: &voir_core::Thesaurus, id: TermId) -> TermNode {
        let t = th.get(id).expect("listed term exists");
        TermNode { id, label: t.label.clone(), children: th.children(id).map(|c| node(th, c)).collect() }
    }
    Ok(Json(ThesaurusResponse { roots: th.roots().map(|r| node(th, r)).collect() }))
}

async fn term_examples(
    State(state): State<Arc<AppState>>,
    path: Result<Path<u64>, PathRejection>,
) -> ApiResult<Json<ExamplesResponse>> {
    let Path(id) = path?;
    let term = TermId(id);
    let catalog = state.catalog.read().expect("catalog lock");
    let examples = catalog
        .term_examples(term)?
        .into_iter()
        .map(|a| {
            let r = catalog.region(a.region_id)?;
            Ok(ExampleItem { region_id: a.region_id, image_id: r.image_id, d_conf: a.d_conf, origin: a.origin, bbox: r.bbox })
        })
        .collect::<voir_core::Result<_>>()?;
    Ok(Json(ExamplesResponse { term_id: term, examples }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ResultsResponse>)> {
    let Json(req) = body?;
    let mode = req.mode.unwrap_or(state.default_mode);
    let concepts: Vec<(TermId, RegionId)> = req.concepts.iter().map(|c| (c.term_id, c.example_region_id)).collect();
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let catalog = state.catalog.read().expect("catalog lock");
    let session = SessionState::new(&catalog, id, mode, &concepts, SessionConfig::default())?;
    let payload = results_payload(&catalog, &session, req.k)?;
    drop(catalog);
    state.sessions.lock().expect("session table lock").insert(id, Arc::new(Mutex::new(session)));
    log::info!("session {id} created in {mode}");
    Ok((StatusCode::CREATED, Json(payload)))
}

async fn session_results(
    State(state): State<Arc<AppState>>,
    path: Result<Path<u64>, PathRejection>,
    query: Result<Query<ResultsQuery>, QueryRejection>,
) -> ApiResult<Json<ResultsResponse>> {
    let Path(id) = path?;
    let Query(q) = query?;
    let session = state.session(id)?;
    let session = session.lock().expect("session lock");
    let catalog = state.catalog.read().expect("catalog lock");
    Ok(Json(results_payload(&catalog, &session, q.k)?))
}

async fn session_feedback(
    State(state): State<Arc<AppState>>,
    path: Result<Path<u64>, PathRejection>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<Json<ResultsResponse>> {
    let Path(id) = path?;
    let Json(req) = body?;
    let judgments = req
        .judgments
        .iter()
        .map(|j| match (j.region_id, j.image_id) {
            (Some(r), None) => Ok(Judgment::region(r, j.polarity)),
            (None, Some(i)) => Ok(Judgment::image(i, j.polarity)),
            _ => Err(ApiError::bad_request("each judgment needs exactly one of region_id and image_id")),
        })
        .collect::<ApiResult<Vec<_>>>()?;
    let session = state.session(id)?;
    let mut session = session.lock().expect("session lock");
    let catalog = state.catalog.read().expect("catalog lock");
    let before = session.recorded.len();
    session.apply_feedback(&catalog, &judgments)?;
    let payload = results_payload(&catalog, &session, req.k)?;
    drop(catalog);
    let recorded = session.recorded[before..].to_vec();
    if !recorded.is_empty() {
        state.journal(JournalEntry::Judgments { session_id: id, mode: session.mode, iteration: session.iteration, judgments: recorded })?;
    }
    Ok(Json(payload))
}

async fn media(state: &AppState, kind: &str, id: u64) -> ApiResult<Response> {
    let dir = state.media_dir.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no media directory configured"))?;
    let path = dir.join(kind).join(format!("{id}.png"));
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no {kind} image for {id}")))
        }
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

async fn thumbnail(State(state): State<Arc<AppState>>, path: Result<Path<u64>, PathRejection>) -> ApiResult<Response> {
    let Path(id) = path?;
    state.catalog.read().expect("catalog lock").image(ImageId(id))?;
    media(&state, "thumbnails", id).await
}

async fn crop(State(state): State<Arc<AppState>>, path: Result<Path<u64>, PathRejection>) -> ApiResult<Response> {
    let Path(id) = path?;
    state.catalog.read().expect("catalog lock").region(RegionId(id))?;
    media(&state, "crops", id).await
}

async fn create_association(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AssociationRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AssociationResponse>)> {
    let Json(req) = body?;
    let a = {
        let mut catalog = state.catalog.write().expect("catalog lock");
        catalog.set_manual_association(req.term_id, req.region_id)?
    };
    state.journal(JournalEntry::ManualAssociation { term_id: req.term_id, region_id: req.region_id })?;
    Ok((StatusCode::CREATED, Json(AssociationResponse { term_id: a.term_id, region_id: a.region_id, d_conf: a.d_conf, origin: a.origin })))
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
