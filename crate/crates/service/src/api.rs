//! `/api/v1` routes, the event stream and static dashboard files.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use nss_core::features::CounterSnapshot;
use nss_core::store::{HistoryQuery, LabelFilter, ModelSummary, StoreError};
use nss_snmp::{Scheduler, SchedulerError, SnmpPoller, Target};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot};
use tower_http::services::{ServeDir, ServeFile};

use crate::config::ClassConfig;
use crate::engine::{PipelineInput, ServiceError, ServiceEvent, Shared, TrainOverrides};

const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    pub shared: Arc<Shared>,
    pub scheduler: Arc<Scheduler<SnmpPoller>>,
    pub pipeline: mpsc::Sender<PipelineInput>,
}

/// Error body `{code, message}` with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            ServiceError::UnknownLabel(_) => (StatusCode::BAD_REQUEST, "unknown_label"),
            ServiceError::InsufficientClasses(_) => (StatusCode::CONFLICT, "insufficient_classes"),
            ServiceError::TrainingInProgress => (StatusCode::CONFLICT, "training_in_progress"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Store(StoreError::OutOfOrder(_)) => (StatusCode::CONFLICT, "out_of_order"),
            ServiceError::Store(StoreError::Checksum(_) | StoreError::Corrupt(_) | StoreError::SchemaTooNew { .. }) => {
                (StatusCode::BAD_REQUEST, "invalid_model")
            }
            ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
            ServiceError::Training(_) => (StatusCode::UNPROCESSABLE_ENTITY, "training_failed"),
            ServiceError::Feature(_) => (StatusCode::BAD_REQUEST, "invalid_snapshot"),
        };
        Self::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn parse_id(s: &str) -> ApiResult<u64> {
    s.parse().map_err(|_| ApiError::bad_request(format!("'{s}' is not a record id")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/state", get(get_state))
        .route("/targets", get(list_targets).post(add_target))
        .route("/targets/{id}", axum::routing::delete(delete_target))
        .route("/history", get(history))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/label", post(label_record))
        .route("/samples", get(list_samples))
        .route("/classes", get(classes))
        .route("/train", post(train))
        .route("/train/status", get(train_status))
        .route("/model", get(active_model))
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/activate", post(activate_model))
        .route("/snapshots", post(ingest))
        .route("/stream", get(stream))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .route_layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state);

    let ui = match ui_dir.filter(|d| d.is_dir()) {
        Some(dir) => Router::new().nest_service(
            "/ui",
            ServeDir::new(dir)
                .append_index_html_on_directories(true)
                .fallback(ServeFile::new(dir.join("index.html"))),
        ),
        None => Router::new()
            .route("/ui", get(placeholder))
            .route("/ui/", get(placeholder))
            .route("/ui/{*rest}", get(placeholder)),
    };
    Router::new()
        .nest("/api/v1", api)
        .merge(ui)
        .route("/", get(|| async { Redirect::temporary("/ui/") }))
}

async fn placeholder() -> Html<&'static str> {
    Html(include_str!("placeholder.html"))
}

async fn auth(State(app): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = app.shared.config().api_token.as_deref() else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query = req
        .uri()
        .query()
        .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("token=")));
    if bearer == Some(token) || query == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong API token").into_response()
    }
}

async fn get_state(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.shared.live_state())
}

async fn list_targets(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.scheduler.targets())
}

async fn add_target(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Target>)> {
    let target: Target = parse_body(&body)?;
    app.scheduler.add_target(target.clone()).map_err(|e| match e {
        SchedulerError::Duplicate(id) => {
            ApiError::new(StatusCode::CONFLICT, "target_exists", format!("target '{id}' already exists"))
        }
        SchedulerError::Invalid(e) => ApiError::bad_request(e.to_string()),
    })?;
    for &i in &target.if_indexes {
        app.shared.track_stream(&target.id, i);
    }
    Ok((StatusCode::CREATED, Json(target)))
}

async fn delete_target(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    if !app.scheduler.remove_target(&id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("target '{id}' not found")));
    }
    app.shared.forget_target(&id);
    Ok(StatusCode::NO_CONTENT)
}

fn history_query(params: &HashMap<String, String>) -> ApiResult<HistoryQuery> {
    let num = |key: &str| -> ApiResult<Option<u64>> {
        params
            .get(key)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<u64>().map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer"))))
            .transpose()
    };
    let limit = num("limit")?.map_or(DEFAULT_PAGE, |l| l as usize);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be within 1..={MAX_PAGE}")));
    }
    let if_index = num("if_index")?
        .map(|v| u32::try_from(v).map_err(|_| ApiError::bad_request("if_index out of range")))
        .transpose()?;
    Ok(HistoryQuery {
        target: params.get("target").filter(|v| !v.is_empty()).cloned(),
        if_index,
        from_ms: num("from")?,
        to_ms: num("to")?,
        label: params.get("label").filter(|v| !v.is_empty()).map(|l| LabelFilter::parse(l)),
        offset: num("offset")?.unwrap_or(0) as usize,
        limit: Some(limit),
    })
}

async fn history(State(app): State<AppState>, Query(params): Query<HashMap<String, String>>) -> ApiResult<impl IntoResponse> {
    let q = history_query(&params)?;
    let shared = app.shared.clone();
    Ok(Json(blocking(move || shared.query_history(&q)).await?))
}

async fn get_record(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let id = parse_id(&id)?;
    let shared = app.shared.clone();
    Ok(Json(blocking(move || shared.record(id)).await?))
}

#[derive(Deserialize)]
struct LabelBody {
    label: String,
}

async fn label_record(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let id = parse_id(&id)?;
    let LabelBody { label } = parse_body(&body)?;
    let shared = app.shared.clone();
    Ok(Json(blocking(move || shared.label_record(id, &label)).await?))
}

async fn list_samples(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.shared.samples())
}

#[derive(Serialize)]
struct ClassSet<'a> {
    classes: &'a [ClassConfig],
    unidentified_strategy: &'a str,
}

async fn classes(State(app): State<AppState>) -> Response {
    let cfg = app.shared.config();
    Json(ClassSet { classes: &cfg.classes, unidentified_strategy: &cfg.unidentified_strategy }).into_response()
}

async fn train(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let overrides: TrainOverrides = if body.iter().all(u8::is_ascii_whitespace) { TrainOverrides::default() } else { parse_body(&body)? };
    let shared = app.shared.clone();
    Ok(Json(blocking(move || shared.train(&overrides)).await?))
}

async fn train_status(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.shared.training_status())
}

#[derive(Serialize)]
struct ModelView {
    #[serde(flatten)]
    summary: ModelSummary,
    active: bool,
    alpha: f64,
    epsilon: f64,
    feature_order: Vec<String>,
    norm: Option<nss_core::features::NormParams>,
}

fn model_view(id: &str, artifact: &nss_core::store::ModelArtifact, active: bool) -> ModelView {
    ModelView {
        summary: ModelSummary::of(id, artifact),
        active,
        alpha: artifact.model.kernel().alpha,
        epsilon: artifact.model.epsilon(),
        feature_order: artifact.feature_order.clone(),
        norm: artifact.model.norm_params().cloned(),
    }
}

async fn active_model(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.shared.active_model().map(|m| model_view(&m.id, &m.artifact, true)))
}

#[derive(Serialize)]
struct ListedModel {
    #[serde(flatten)]
    summary: ModelSummary,
    active: bool,
}

async fn list_models(State(app): State<AppState>) -> ApiResult<impl IntoResponse> {
    let active = app.shared.active_model().map(|m| m.id.clone());
    let shared = app.shared.clone();
    let list = blocking(move || shared.list_models()).await?;
    Ok(Json(
        list.into_iter()
            .map(|s| ListedModel { active: Some(&s.id) == active.as_ref(), summary: s })
            .collect::<Vec<_>>(),
    ))
}

async fn get_model(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let active = app.shared.active_model().is_some_and(|m| m.id == id);
    let shared = app.shared.clone();
    let key = id.clone();
    let artifact = blocking(move || shared.load_model(&key)).await?;
    Ok(Json(model_view(&id, &artifact, active)))
}

async fn activate_model(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let shared = app.shared.clone();
    Ok(Json(blocking(move || shared.activate_model(&id)).await?))
}

#[derive(Serialize)]
struct IngestResult {
    record: Option<nss_core::store::StateRecord>,
    error: Option<String>,
}

/// Feeds snapshots (e.g. a replayed trace) through the pipeline as if polled.
async fn ingest(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let snapshots: Vec<CounterSnapshot> = match parse_body::<Vec<CounterSnapshot>>(&body) {
        Ok(v) => v,
        Err(_) => vec![parse_body::<CounterSnapshot>(&body)?],
    };
    for s in &snapshots {
        app.shared.track_stream(&s.target, s.if_index);
    }
    let (tx, rx) = oneshot::channel();
    let unavailable = || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "pipeline stopped");
    app.pipeline.send(PipelineInput::Ingest(snapshots, tx)).await.map_err(|_| unavailable())?;
    let results = rx.await.map_err(|_| unavailable())?;
    Ok(Json(
        results
            .into_iter()
            .map(|r| match r {
                Ok(record) => IngestResult { record, error: None },
                Err(e) => IngestResult { record: None, error: Some(e) },
            })
            .collect::<Vec<_>>(),
    ))
}

fn sse_event(e: &ServiceEvent) -> Event {
    let data = match e {
        ServiceEvent::State(s) => serde_json::to_string(s),
        ServiceEvent::Record(r) => serde_json::to_string(r),
        ServiceEvent::Training(t) => serde_json::to_string(t),
    }
    .expect("events serialize");
    Event::default().event(e.kind()).data(data)
}

/// Current stream states first, then live events.
async fn stream(State(app): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = app.shared.subscribe();
    let initial: Vec<Result<Event, Infallible>> = app
        .shared
        .stream_states()
        .into_iter()
        .map(|s| Ok(sse_event(&ServiceEvent::State(s))))
        .collect();
    let live = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((Ok(sse_event(&e)), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(futures::stream::iter(initial).chain(live)).keep_alive(KeepAlive::default())
}
