//! HTTP+JSON backend for the ICU monitor: cohort series, model predictions,
//! failure events and clinician annotations, all under `/api`.
//!
//! Read endpoints derive everything from the files of a data directory laid
//! out by [`ews_core::artifacts`]. Annotations live in one JSON file per stay
//! and are acknowledged only after the file has been replaced on disk.

pub mod annotations;
pub mod data;
pub mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use ews_core::artifacts::{ANNOTATIONS_DIR, ANNOTATION_TYPES_FILE, COHORT_DIR};
use ews_core::{Seconds, DEFAULT_GRID_STEP};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use annotations::{apply_query, Annotation, AnnotationInput, AnnotationStore, AnnotationTypeDef, AnnotationUpdate, ListQuery, TypeRegistry};
use data::{ChannelSeries, DataDir, EventView, PatientDescriptor, Predictions};
pub use error::{ApiError, FieldError, MonitorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/annotations`.
    pub annotation_dir: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    /// Wall-clock instant of grid time zero for every stay.
    pub epoch: DateTime<Utc>,
    pub grid_step: Seconds,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            data_dir: PathBuf::from("data"),
            annotation_dir: None,
            host: "127.0.0.1".into(),
            port: 8080,
            epoch: DateTime::parse_from_rfc3339("2100-01-01T00:00:00Z").expect("valid literal").with_timezone(&Utc),
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

struct Inner {
    data: DataDir,
    types: TypeRegistry,
    store: AnnotationStore,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn open(config: &MonitorConfig) -> Result<Self, MonitorError> {
        let root = &config.data_dir;
        let data_err = |message: String| MonitorError::DataDir { path: root.display().to_string(), message };
        let cohort = root.join(COHORT_DIR);
        std::fs::read_dir(&cohort).map_err(|e| data_err(format!("cannot read {}: {e}", cohort.display())))?;
        if config.grid_step <= 0 {
            return Err(data_err(format!("grid step must be positive, got {}", config.grid_step)));
        }
        let types = TypeRegistry::load(&root.join(ANNOTATION_TYPES_FILE))?;
        let ann_dir = config.annotation_dir.clone().unwrap_or_else(|| root.join(ANNOTATIONS_DIR));
        let store = AnnotationStore::open(&ann_dir)?;
        let data = DataDir { root: root.clone(), epoch: config.epoch, grid_step: config.grid_step };
        Ok(AppState(Arc::new(Inner { data, types, store })))
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v).map_err(|e| match e {
        JsonRejection::JsonDataError(_) => ApiError::invalid(vec![FieldError { path: String::new(), message: e.body_text() }]),
        other => ApiError::bad_request(other.body_text()),
    })
}

/// Runs file-reading work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&DataDir) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let inner = state.0.clone();
    tokio::task::spawn_blocking(move || f(&inner.data)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_patients(State(s): State<AppState>) -> ApiResult<Vec<PatientDescriptor>> {
    blocking(&s, |d| d.stay_ids()?.iter().map(|id| d.descriptor(id)).collect()).await.map(Json)
}

async fn get_patient(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<PatientDescriptor> {
    blocking(&s, move |d| d.descriptor(&id)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    /// Comma-separated channel ids; all recorded channels when absent.
    channels: Option<String>,
    from_s: Option<Seconds>,
    to_s: Option<Seconds>,
    max_points: Option<usize>,
}

async fn get_series(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<Vec<ChannelSeries>> {
    let q = query(q)?;
    let channels: Option<Vec<String>> =
        q.channels.map(|c| c.split(',').map(str::trim).filter(|c| !c.is_empty()).map(str::to_string).collect());
    blocking(&s, move |d| d.series(&id, channels.as_deref(), q.from_s, q.to_s, q.max_points)).await.map(Json)
}

async fn get_predictions(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Predictions> {
    blocking(&s, move |d| d.predictions(&id)).await.map(Json)
}

async fn get_events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Vec<EventView>> {
    blocking(&s, move |d| d.event_views(&id)).await.map(Json)
}

async fn require_stay(s: &AppState, id: &str) -> Result<(), ApiError> {
    let id = id.to_string();
    let exists = blocking(s, move |d| Ok(d.has_stay(&id))).await?;
    if exists {
        Ok(())
    } else {
        Err(ApiError::not_found("unknown stay"))
    }
}

async fn list_annotations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ListQuery>, QueryRejection>,
) -> ApiResult<Vec<Annotation>> {
    let q = query(q)?;
    require_stay(&s, &id).await?;
    apply_query(s.0.store.for_stay(&id), &q).map(Json)
}

async fn create_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    b: Result<Json<AnnotationInput>, JsonRejection>,
) -> Result<(StatusCode, Json<Annotation>), ApiError> {
    require_stay(&s, &id).await?;
    let input = body(b)?;
    let a = s.0.store.create(&id, input, &s.0.types).await?;
    Ok((StatusCode::CREATED, Json(a)))
}

async fn get_annotation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Annotation> {
    s.0.store.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown annotation {id:?}")))
}

async fn update_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    b: Result<Json<AnnotationUpdate>, JsonRejection>,
) -> ApiResult<Annotation> {
    if s.0.store.get(&id).is_none() {
        return Err(ApiError::not_found(format!("unknown annotation {id:?}")));
    }
    let update = body(b)?;
    s.0.store.update(&id, update, &s.0.types).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct DeleteQuery {
    version: Option<u64>,
}

async fn delete_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<DeleteQuery>, QueryRejection>,
) -> ApiResult<Annotation> {
    let q = query(q)?;
    s.0.store.delete(&id, q.version).await.map(Json)
}

async fn annotation_types(State(s): State<AppState>) -> Json<Vec<AnnotationTypeDef>> {
    Json(s.0.types.defs().to_vec())
}

async fn export_annotations(State(s): State<AppState>) -> Json<Vec<Annotation>> {
    Json(s.0.store.export())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/patients", get(list_patients))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/series", get(get_series))
        .route("/patients/{id}/predictions", get(get_predictions))
        .route("/patients/{id}/events", get(get_events))
        .route("/patients/{id}/annotations", get(list_annotations).post(create_annotation))
        .route("/annotations/{id}", get(get_annotation).put(update_annotation).delete(delete_annotation))
        .route("/annotation-types", get(annotation_types))
        .route("/export/annotations", get(export_annotations));
    Router::new().nest("/api", api).fallback(fallback).with_state(state)
}

/// A bound listener with its router, ready to run.
pub struct Server {
    listener: TcpListener,
    app: Router,
}

impl Server {
    pub fn local_addr(&self) -> Result<SocketAddr, MonitorError> {
        self.listener.local_addr().map_err(MonitorError::Server)
    }

    pub async fn run(self) -> Result<(), MonitorError> {
        axum::serve(self.listener, self.app).await.map_err(MonitorError::Server)
    }
}

/// Opens the data directory and binds the port; both fail fast.
pub async fn bind(config: &MonitorConfig) -> Result<Server, MonitorError> {
    let state = AppState::open(config)?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = TcpListener::bind(&addr).await.map_err(|source| MonitorError::Bind { addr, source })?;
    Ok(Server { listener, app: router(state) })
}

pub async fn serve(config: &MonitorConfig) -> Result<(), MonitorError> {
    let server = bind(config).await?;
    log::info!("monitor listening on http://{}", server.local_addr()?);
    server.run().await
}
