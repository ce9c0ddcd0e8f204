//! HTTP service exposing selection sessions.
//!
//! The service holds no state of its own beyond the session store: every
//! request restores what it needs from disk, so restarting the process
//! between two requests changes nothing. Each mutating endpoint computes one
//! workflow event through [`rts_core::workflow`] and applies it with
//! [`Session::transition`], under the store's exclusive claim on the session.
//! A second concurrent writer gets 409.

use crate::config::ServiceConfig;
use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rts_core::datamodel::{load_dataset, validate_dataset, DataError, Dataset};
use rts_core::digest::fnv1a64_hex;
use rts_core::features::{FeatureCatalog, FeatureError, FeatureScope};
use rts_core::ranker::{LearningCurve, RankError, Role};
use rts_core::session::{
    next_state, AuditRecord, Decision, EventKind, ExportDocument, Session, SessionError,
    SessionState, SessionStore, SessionSummary, StoreError, WorkflowEvent,
};
use rts_core::verification::{AdequacyReport, VerificationDraw, VerificationError};
use rts_core::workflow::{self, RankingView, RoleLabel, WorkflowError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use tower_http::services::ServeDir;

/// Header naming the person behind a request; recorded in the audit trail.
pub const ACTOR_HEADER: &str = "x-rts-actor";
pub const DEFAULT_ACTOR: &str = "test-manager";

/// Structured error body: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::IllegalTransition { .. } => {
                Self::new(StatusCode::CONFLICT, "IllegalTransition", message)
            }
            SessionError::PayloadInvalid(_) => Self::bad_request("PayloadInvalid", message),
            SessionError::IterationLimit { .. } => {
                Self::new(StatusCode::CONFLICT, "IterationLimit", message)
            }
            SessionError::NotReady(_) => Self::new(StatusCode::CONFLICT, "NotReady", message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => Self::not_found(message),
            StoreError::Busy(_) => Self::new(StatusCode::CONFLICT, "Conflict", message),
            StoreError::StoreCorrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreCorrupt", message)
            }
            StoreError::Io(_) => Self::internal(message),
        }
    }
}

impl From<FeatureError> for ApiError {
    fn from(e: FeatureError) -> Self {
        let code = match e {
            FeatureError::UnknownRelease(_) => "UnknownRelease",
            FeatureError::ScopeMismatch(_) => "ScopeMismatch",
            FeatureError::EmptyScope => "EmptyScope",
        };
        Self::bad_request(code, e.to_string())
    }
}

impl From<RankError> for ApiError {
    fn from(e: RankError) -> Self {
        let code = match e {
            RankError::Features(f) => return f.into(),
            RankError::DimensionMismatch { .. } => "DimensionMismatch",
            RankError::DegenerateLabels(_) => "DegenerateLabels",
            RankError::UnknownTestId(_) => "UnknownTestId",
            RankError::DuplicateTestId(_) => "DuplicateTestId",
            RankError::InvalidConfig(_) => "InvalidConfig",
        };
        Self::bad_request(code, e.to_string())
    }
}

impl From<VerificationError> for ApiError {
    fn from(e: VerificationError) -> Self {
        let code = match e {
            VerificationError::EmptySuite => "EmptySuite",
            VerificationError::InvalidRequest(_) => "PayloadInvalid",
            VerificationError::DegenerateLabels(_) => "DegenerateLabels",
            VerificationError::UnknownTestId(_) => "UnknownTestId",
            VerificationError::CutoffOutOfRange { .. } => "CutoffOutOfRange",
            VerificationError::CutoffOutsideInterval { .. } => "CutoffOutsideInterval",
            VerificationError::InadequateRanking => "InadequateRanking",
        };
        Self::bad_request(code, e.to_string())
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::Session(e) => e.into(),
            WorkflowError::Features(e) => e.into(),
            WorkflowError::Rank(e) => e.into(),
            WorkflowError::Verification(e) => e.into(),
            WorkflowError::UnknownTestId(_) => Self::bad_request("UnknownTestId", e.to_string()),
        }
    }
}

/// JSON body extractor whose rejections use the structured error body.
pub struct Payload<T>(pub T);

impl<S, T> FromRequest<S> for Payload<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(Payload(value)),
            Err(rejection) => Err(body_error(rejection.status(), rejection.body_text())),
        }
    }
}

fn body_error(status: StatusCode, message: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "PayloadTooLarge", message)
    } else {
        ApiError::bad_request("PayloadInvalid", message)
    }
}

/// Shared handle on configuration and storage.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    store: SessionStore,
    datasets_dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn valid_dataset_id(id: &str) -> bool {
    id.strip_prefix("ds-")
        .is_some_and(|h| h.len() == 16 && h.bytes().all(|b| b.is_ascii_hexdigit()))
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, String> {
        config.validate()?;
        let store = SessionStore::open(&config.store_dir).map_err(|e| e.to_string())?;
        let datasets_dir = config.store_dir.join("datasets");
        std::fs::create_dir_all(&datasets_dir)
            .map_err(|e| format!("cannot create {}: {e}", datasets_dir.display()))?;
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                store,
                datasets_dir,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    fn dataset_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        if !valid_dataset_id(id) {
            return Err(ApiError::not_found(format!("dataset {id:?} not found")));
        }
        Ok(self.inner.datasets_dir.join(format!("{id}.json")))
    }

    /// Stores a parsed dataset under its content digest; uploading the same
    /// content twice yields the same id.
    pub fn put_dataset(&self, d: &Dataset) -> Result<String, ApiError> {
        let json = d.to_json();
        let id = format!("ds-{}", fnv1a64_hex(json.as_bytes()));
        let path = self.dataset_path(&id)?;
        if path.is_file() {
            return Ok(id);
        }
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .inner
            .datasets_dir
            .join(format!(".{id}.{}.{n}.tmp", std::process::id()));
        std::fs::write(&tmp, json.as_bytes())
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| ApiError::internal(format!("cannot store dataset: {e}")))?;
        Ok(id)
    }

    pub fn dataset(&self, id: &str) -> Result<Dataset, ApiError> {
        let path = self.dataset_path(id)?;
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ApiError::not_found(format!("dataset {id:?} not found")));
            }
            Err(e) => return Err(ApiError::internal(format!("cannot read dataset: {e}"))),
        };
        load_dataset(&bytes).map_err(|e| ApiError::internal(format!("stored dataset {id}: {e}")))
    }

    fn session_dataset(&self, s: &Session) -> Result<Dataset, ApiError> {
        let id = s
            .dataset_ref
            .as_deref()
            .ok_or_else(|| ApiError::from(SessionError::NotReady("dataset".into())))?;
        self.dataset(id)
    }
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get(ACTOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(DEFAULT_ACTOR)
        .to_string()
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Claims the session, restores it, builds one event and applies it. An
/// event that is illegal in the current state is refused before its payload
/// is looked at.
async fn mutate<F>(
    state: AppState,
    id: String,
    actor: String,
    kind: EventKind,
    build: F,
) -> Result<Session, ApiError>
where
    F: FnOnce(&AppState, &Session) -> Result<WorkflowEvent, ApiError> + Send + 'static,
{
    let guard = state.store().claim(&id)?;
    blocking(move || {
        let _guard = guard;
        let current = state.store().restore(&id)?;
        if next_state(current.state, kind).is_none() {
            return Err(SessionError::IllegalTransition {
                state: current.state,
                event: kind,
            }
            .into());
        }
        let event = build(&state, &current)?;
        let next = current.transition(&actor, event)?;
        state.store().persist(&next)?;
        Ok(next)
    })
    .await
}

async fn read_session(state: &AppState, id: String) -> Result<Session, ApiError> {
    let state = state.clone();
    blocking(move || Ok(state.store().restore(&id)?)).await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCreated {
    pub dataset_id: String,
    pub corrupt: bool,
    pub issues: usize,
}

async fn upload_dataset(
    State(state): State<AppState>,
    headers: HeaderMap,
    req: Request,
) -> Result<(StatusCode, Json<DatasetCreated>), ApiError> {
    let multipart = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if multipart {
        let mut form = Multipart::from_request(req, &state)
            .await
            .map_err(|e| body_error(e.status(), e.body_text()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| body_error(e.status(), e.body_text()))?
            .ok_or_else(|| ApiError::bad_request("PayloadInvalid", "multipart body has no file"))?;
        field
            .bytes()
            .await
            .map_err(|e| body_error(e.status(), e.body_text()))?
    } else {
        Bytes::from_request(req, &state)
            .await
            .map_err(|e| body_error(e.status(), e.body_text()))?
    };
    let created = blocking(move || {
        let d = load_dataset(&bytes).map_err(|e| match e {
            DataError::Io { .. } => ApiError::internal(e.to_string()),
            _ => ApiError::bad_request("PayloadInvalid", e.to_string()),
        })?;
        let report = validate_dataset(&d);
        let dataset_id = state.put_dataset(&d)?;
        Ok(DatasetCreated {
            dataset_id,
            corrupt: report.corrupt,
            issues: report.issues.len(),
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
struct CatalogQuery {
    release: String,
}

async fn dataset_catalog(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<CatalogQuery>,
) -> Result<Json<FeatureCatalog>, ApiError> {
    blocking(move || {
        let d = state.dataset(&id)?;
        Ok(Json(workflow::catalog(&d, &q.release)?))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset_id: String,
    #[serde(default)]
    pub max_iterations: Option<u32>,
}

async fn create_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    Payload(body): Payload<CreateSession>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let actor = actor(&headers);
    let max = body.max_iterations.unwrap_or(state.config().max_iterations);
    if max == 0 {
        return Err(ApiError::bad_request(
            "PayloadInvalid",
            "max_iterations must be positive",
        ));
    }
    let summary = blocking(move || {
        let d = state.dataset(&body.dataset_id)?;
        let report = validate_dataset(&d);
        if report.corrupt {
            return Err(ApiError::bad_request(
                "DatasetCorrupt",
                format!(
                    "dataset {} is corrupt:\n{}",
                    body.dataset_id,
                    report.render_text()
                ),
            ));
        }
        let fresh = Session::with_random_id(max);
        let _guard = state.store().claim(&fresh.id)?;
        let s = fresh.transition(
            &actor,
            WorkflowEvent::LoadData {
                dataset_ref: body.dataset_id,
            },
        )?;
        state.store().persist(&s)?;
        Ok(s.summary())
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    Ok(Json(read_session(&state, id).await?.summary()))
}

async fn get_audit(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<AuditRecord>>, ApiError> {
    Ok(Json(read_session(&state, id).await?.audit))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeRequest {
    pub target_release: String,
    #[serde(default)]
    pub deselected_groups: BTreeSet<String>,
}

async fn post_scope(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Payload(body): Payload<ScopeRequest>,
) -> Result<Json<SessionSummary>, ApiError> {
    let s = mutate(
        state,
        id,
        actor(&headers),
        EventKind::ScopeFeatures,
        move |st, s| {
            let d = st.session_dataset(s)?;
            let scope = FeatureScope {
                target_release: body.target_release,
                deselected_groups: body.deselected_groups,
            };
            Ok(workflow::scope_event(&d, scope)?)
        },
    )
    .await?;
    Ok(Json(s.summary()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsRequest {
    /// Role of the whole batch; taken from the entries when omitted.
    #[serde(default)]
    pub role: Option<Role>,
    pub entries: Vec<RoleLabel>,
}

async fn post_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Payload(body): Payload<LabelsRequest>,
) -> Result<Json<SessionSummary>, ApiError> {
    let role = body.role.or_else(|| body.entries.first().map(|e| e.role));
    let kind = match role {
        Some(Role::Verification) => EventKind::SubmitVerificationLabels,
        _ => EventKind::SubmitTrainingLabels,
    };
    let s = mutate(state, id, actor(&headers), kind, move |st, s| {
        let d = st.session_dataset(s)?;
        Ok(workflow::label_batch_event(&d, body.role, body.entries)?)
    })
    .await?;
    Ok(Json(s.summary()))
}

async fn post_train(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<SessionSummary>, ApiError> {
    let s = mutate(state, id, actor(&headers), EventKind::Train, |st, s| {
        let d = st.session_dataset(s)?;
        Ok(workflow::train_event(s, &d, &st.config().train)?)
    })
    .await?;
    Ok(Json(s.summary()))
}

async fn get_ranking(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<RankingView>, ApiError> {
    let s = read_session(&state, id).await?;
    Ok(Json(workflow::ranking_view(&s)?))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawRequest {
    pub k: usize,
    pub seed: u64,
}

/// Suggests tests to label; the session is not modified.
async fn post_draw(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Payload(body): Payload<DrawRequest>,
) -> Result<Json<VerificationDraw>, ApiError> {
    let s = read_session(&state, id).await?;
    Ok(Json(workflow::draw(&s, body.k, body.seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyView {
    pub state: SessionState,
    pub iteration: u32,
    pub report: AdequacyReport,
    /// Reports of earlier iterations, oldest first.
    pub history: Vec<AdequacyReport>,
    pub offered_decisions: Vec<Decision>,
}

/// Returns the adequacy of the current ranking. A session holding fresh
/// verification labels is assessed first (the Assess transition).
async fn get_adequacy(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<AdequacyView>, ApiError> {
    let current = read_session(&state, id.clone()).await?;
    let s = if current.state == SessionState::VerificationLabeled {
        mutate(state, id, actor(&headers), EventKind::Assess, |st, s| {
            Ok(workflow::assess_event(s, &st.config().thresholds)?)
        })
        .await?
    } else {
        current
    };
    let fresh = s.reports.len() > s.iteration as usize;
    let report = match s.latest_report() {
        Some(r) if fresh => r.clone(),
        _ => {
            return Err(SessionError::NotReady(
                "no adequacy report for the current ranking; submit verification labels".into(),
            )
            .into());
        }
    };
    let history = s.reports[..s.reports.len() - 1].to_vec();
    Ok(Json(AdequacyView {
        state: s.state,
        iteration: s.iteration,
        report,
        history,
        offered_decisions: s.offered_decisions(),
    }))
}

async fn get_learning_curve(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<LearningCurve>, ApiError> {
    blocking(move || {
        let s = state.store().restore(&id)?;
        let d = state.session_dataset(&s)?;
        Ok(Json(workflow::session_learning_curve(
            &s,
            &d,
            &state.config().train,
        )?))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub decision: Decision,
    #[serde(default)]
    pub cutoff_rank: Option<usize>,
    #[serde(default)]
    pub allow_override: bool,
}

async fn post_decision(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Payload(body): Payload<DecisionRequest>,
) -> Result<Json<SessionSummary>, ApiError> {
    let kind = match body.decision {
        Decision::Accept => EventKind::DecideAccept,
        Decision::Iterate => EventKind::DecideIterate,
        Decision::Abort => EventKind::DecideAbort,
    };
    let s = mutate(state, id, actor(&headers), kind, move |_, s| {
        Ok(workflow::decision_event(
            s,
            body.decision,
            body.cutoff_rank,
            body.allow_override,
        )?)
    })
    .await?;
    Ok(Json(s.summary()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostTestRequest {
    #[serde(default)]
    pub reflection: String,
    #[serde(default)]
    pub improvement_notes: String,
}

async fn post_posttest(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Payload(body): Payload<PostTestRequest>,
) -> Result<Json<SessionSummary>, ApiError> {
    let s = mutate(
        state,
        id,
        actor(&headers),
        EventKind::RecordPostTest,
        move |_, _| {
            Ok(WorkflowEvent::RecordPostTest {
                reflection: body.reflection,
                improvement_notes: body.improvement_notes,
            })
        },
    )
    .await?;
    Ok(Json(s.summary()))
}

async fn get_export(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ExportDocument>, ApiError> {
    let s = read_session(&state, id).await?;
    Ok(Json(s.export()?))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_body_bytes;
    let ui_dir = state.config().ui_dir.clone();
    let mut app = Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/catalog", get(dataset_catalog))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/audit", get(get_audit))
        .route("/sessions/{id}/scope", post(post_scope))
        .route("/sessions/{id}/labels", post(post_labels))
        .route("/sessions/{id}/train", post(post_train))
        .route("/sessions/{id}/ranking", get(get_ranking))
        .route("/sessions/{id}/verification/draw", post(post_draw))
        .route("/sessions/{id}/adequacy", get(get_adequacy))
        .route("/sessions/{id}/learning-curve", get(get_learning_curve))
        .route("/sessions/{id}/decision", post(post_decision))
        .route("/sessions/{id}/posttest", post(post_posttest))
        .route("/sessions/{id}/export", get(get_export))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.fallback(fallback)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), String> {
    let listen = config.listen.clone();
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .map_err(|e| format!("cannot bind {listen}: {e}"))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    eprintln!("rts listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
