//! HTTP JSON API under `/api/v1`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use sdrec_core::data::{PlayerId, SyntheticConfig};

use crate::config::Config;
use crate::dataset::{attribute_names, build_dataset, DatasetEntry, DatasetSource};
use crate::error::ServiceError;
use crate::session::{BinRef, RankRequest, SampleRequest, Session};
use crate::state::{AppState, SessionSlot};

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError(e.into())
    }
}

pub fn status_of(e: &ServiceError) -> StatusCode {
    match e.code() {
        "not_found" => StatusCode::NOT_FOUND,
        "illegal_step" => StatusCode::CONFLICT,
        "internal" | "io" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(status_of(&self.0), StatusCode::INTERNAL_SERVER_ERROR) {
            tracing::error!(error = %self.0, "request failed");
        }
        (status_of(&self.0), Json(self.0.body())).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;
type Shared = Arc<AppState>;

fn ok(v: Value) -> ApiResult {
    Ok(Json(v).into_response())
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/datasets", post(load_dataset))
        .route("/datasets/{id}", get(dataset_summary))
        .route("/datasets/{id}/projection", get(dataset_projection))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/cancel", post(job_cancel))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/group", post(select_group))
        .route("/sessions/{id}/representative", post(select_representative))
        .route("/sessions/{id}/sample", post(sample))
        .route("/sessions/{id}/fuse", post(fuse))
        .route("/sessions/{id}/rank", post(rank))
        .route("/sessions/{id}/assign", post(assign))
        .route("/sessions/{id}/propagate", post(propagate))
        .route("/sessions/{id}/uncertain", get(uncertain))
        .route("/sessions/{id}/remediate", post(remediate))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/history", get(history));
    Router::new().nest("/api/v1", api).with_state(state)
}

// ---------------------------------------------------------------- datasets

#[derive(Deserialize)]
struct LoadRequest {
    synthetic: Option<SyntheticConfig>,
    path: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

async fn load_dataset(State(st): State<Shared>, Json(req): Json<LoadRequest>) -> ApiResult {
    let source = match (req.synthetic, req.path) {
        (Some(cfg), None) => DatasetSource::Synthetic(cfg),
        (None, Some(logs)) => DatasetSource::Files {
            logs,
            embeddings: req.embeddings,
        },
        _ => return Err(ServiceError::BadRequest("give exactly one of `synthetic` or `path`".into()).into()),
    };
    if let DatasetSource::Files { logs, embeddings } = &source {
        for p in std::iter::once(logs).chain(embeddings) {
            if !p.exists() {
                return Err(ServiceError::NotFound(format!("file {}", p.display())).into());
            }
        }
    }
    let dataset_id = source.id();
    let job = st.jobs.create("load_dataset");
    let job_id = job.view().id;
    if let Some(entry) = st.cached_dataset(&dataset_id) {
        job.finish(Ok(serde_json::to_value(&entry.summary)?));
    } else {
        let st = st.clone();
        tokio::task::spawn_blocking(move || {
            let out = build_dataset(source, &st.config, &mut |stage, f| job.update(stage, f))
                .and_then(|entry| st.insert_dataset(entry))
                .and_then(|entry| Ok(serde_json::to_value(&entry.summary)?));
            job.finish(out);
        });
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id, "dataset_id": dataset_id }))).into_response())
}

async fn dataset(st: &Shared, id: String) -> Result<Arc<DatasetEntry>, ApiError> {
    let st = st.clone();
    Ok(tokio::task::spawn_blocking(move || st.dataset_blocking(&id)).await.map_err(internal)??)
}

async fn dataset_summary(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let entry = dataset(&st, id).await?;
    ok(serde_json::to_value(&entry.summary)?)
}

async fn dataset_projection(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let entry = dataset(&st, id).await?;
    let channels: Vec<Value> = entry
        .projections
        .iter()
        .map(|(c, (proj, grid))| {
            json!({
                "channel": c,
                "perplexity": proj.perplexity,
                "kl_divergence": proj.kl_divergence,
                "points": proj.coords.iter().map(|(p, xy)| json!({ "player": p, "x": xy[0], "y": xy[1] })).collect::<Vec<_>>(),
                "hexbin": {
                    "radius": grid.radius,
                    "bins": grid.bins.iter().map(|b| json!({
                        "q": b.hex.q,
                        "r": b.hex.r,
                        "center": b.center,
                        "count": b.count,
                        "members": b.members,
                        "mean": b.mean,
                    })).collect::<Vec<_>>(),
                },
            })
        })
        .collect();
    ok(json!({ "attribute_names": attribute_names(&entry.dataset), "channels": channels }))
}

async fn job_status(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(serde_json::to_value(st.jobs.get(&id)?.view())?)
}

async fn job_cancel(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let job = st.jobs.get(&id)?;
    job.cancel();
    ok(serde_json::to_value(job.view())?)
}

// ---------------------------------------------------------------- sessions

fn internal(e: tokio::task::JoinError) -> ApiError {
    ApiError(ServiceError::Internal(e.to_string()))
}

/// Queues behind earlier mutations of the same session, then applies `op`.
async fn mutate<F>(st: &Shared, id: &str, op: F) -> ApiResult
where
    F: FnOnce(&mut Session, &DatasetEntry, &Config) -> Result<Value, ServiceError> + Send + 'static,
{
    let slot = st.session(id)?;
    // the guard moves into the worker so a dropped request cannot release it early
    let guard = slot.lock.clone().lock_owned().await;
    let st = st.clone();
    let out = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        st.apply(&slot, op)
    })
    .await
    .map_err(internal)??;
    ok(out)
}

#[derive(Deserialize)]
struct CreateSession {
    dataset_id: String,
    #[serde(default)]
    seed: u64,
}

async fn create_session(State(st): State<Shared>, Json(req): Json<CreateSession>) -> ApiResult {
    let session = st.create_session(&req.dataset_id, req.seed)?;
    Ok((StatusCode::CREATED, Json(session.view())).into_response())
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(st.session(&id)?.read().view())
}

#[derive(Deserialize)]
struct GroupRequest {
    bins: Vec<BinRef>,
}

async fn select_group(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<GroupRequest>) -> ApiResult {
    mutate(&st, &id, move |s, ctx, _| s.select_group(ctx, &req.bins)).await
}

#[derive(Deserialize)]
struct PlayerRequest {
    player: PlayerId,
}

async fn select_representative(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<PlayerRequest>,
) -> ApiResult {
    mutate(&st, &id, move |s, ctx, _| s.select_representative(ctx, req.player)).await
}

async fn sample(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<SampleRequest>) -> ApiResult {
    mutate(&st, &id, move |s, ctx, cfg| s.sample(ctx, cfg, &req)).await
}

async fn fuse(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<RankRequest>) -> ApiResult {
    mutate(&st, &id, move |s, ctx, cfg| s.fuse(ctx, cfg, &req)).await
}

async fn rank(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<RankRequest>) -> ApiResult {
    mutate(&st, &id, move |s, ctx, cfg| s.rank(ctx, cfg, &req)).await
}

#[derive(Deserialize)]
struct AssignRequest {
    #[serde(alias = "player")]
    representative: PlayerId,
    row_id: String,
}

async fn assign(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<AssignRequest>) -> ApiResult {
    mutate(&st, &id, move |s, _, _| s.assign(req.representative, &req.row_id)).await
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct PropagateRequest {
    background: bool,
}

fn run_propagation(
    st: &AppState,
    slot: &SessionSlot,
    progress: &mut dyn FnMut(f64) -> bool,
) -> Result<Value, ServiceError> {
    st.apply(slot, |s, ctx, cfg| {
        let outcome = s.plan_propagation(ctx, cfg, progress)?;
        Ok(s.commit_propagation(outcome))
    })
}

async fn propagate(State(st): State<Shared>, Path(id): Path<String>, body: Option<Json<PropagateRequest>>) -> ApiResult {
    let req = body.map(|b| b.0).unwrap_or_default();
    if !req.background {
        return mutate(&st, &id, |s, ctx, cfg| {
            let outcome = s.plan_propagation(ctx, cfg, &mut |_| true)?;
            Ok(s.commit_propagation(outcome))
        })
        .await;
    }
    let slot = st.session(&id)?;
    let job = st.jobs.create("propagate");
    let job_id = job.view().id;
    let st = st.clone();
    tokio::spawn(async move {
        let guard = slot.lock.clone().lock_owned().await;
        let worker = job.clone();
        let out = tokio::task::spawn_blocking(move || {
            let _guard = guard;
            run_propagation(&st, &slot, &mut |f| worker.update("propagate", f))
        })
        .await
        .unwrap_or_else(|e| Err(ServiceError::Internal(e.to_string())));
        job.finish(out);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

#[derive(Deserialize)]
struct UncertainQuery {
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    offset: usize,
}

fn default_k() -> usize {
    5
}

async fn uncertain(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<UncertainQuery>) -> ApiResult {
    let session = st.session(&id)?.read();
    let mut page = session.uncertain(q.offset + q.k)?;
    if let Some(rows) = page["rows"].as_array_mut() {
        rows.drain(..q.offset.min(rows.len()));
    }
    page["offset"] = json!(q.offset);
    ok(page)
}

#[derive(Deserialize)]
struct RemediateRequest {
    player: PlayerId,
    row_id: String,
}

async fn remediate(State(st): State<Shared>, Path(id): Path<String>, Json(req): Json<RemediateRequest>) -> ApiResult {
    mutate(&st, &id, move |s, _, _| s.remediate(req.player, &req.row_id)).await
}

async fn finish(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    mutate(&st, &id, |s, _, _| s.finish()).await
}

async fn history(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    ok(st.session(&id)?.read().history_payload())
}
