//! HTTP+JSON interface.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use perfsieve::evaluation::{PostSet, QuadrantMode, View};
use perfsieve::self_training::SelfTrainConfig;
use perfsieve::store::ProjectDir;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{AppError, AppResult};
use crate::jobs::{self, JobKind, JobSpec, JobState, JobStatus};
use crate::project::{validate_id, AgreementScope, CreateProject, DesignRequest, IngestRequest, LabelSubmission, Project};

/// One loaded project: its state behind a lock plus a queue that runs its
/// jobs one at a time.
pub struct ProjectHandle {
    pub id: String,
    pub state: Mutex<Project>,
    runner: Arc<tokio::sync::Mutex<()>>,
}

impl ProjectHandle {
    fn new(project: Project) -> Self {
        Self { id: project.id().to_string(), state: Mutex::new(project), runner: Arc::new(tokio::sync::Mutex::new(())) }
    }

    /// Holds back job execution for this project until the guard is dropped.
    /// Submitted jobs stay queued meanwhile.
    pub async fn pause_jobs(&self) -> tokio::sync::OwnedMutexGuard<()> {
        self.runner.clone().lock_owned().await
    }
}

pub struct AppState {
    data_dir: PathBuf,
    projects: RwLock<HashMap<String, Arc<ProjectHandle>>>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self { data_dir: data_dir.into(), projects: RwLock::new(HashMap::new()), jobs: Mutex::new(BTreeMap::new()) })
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.data_dir
    }

    fn project_dir(&self, id: &str) -> ProjectDir {
        ProjectDir::new(self.data_dir.join(id))
    }

    /// Loaded project by id, opening it from disk on first use.
    pub fn project(&self, id: &str) -> AppResult<Arc<ProjectHandle>> {
        validate_id(id).map_err(|_| AppError::not_found(format!("no project `{id}`")))?;
        if let Some(h) = self.projects.read().get(id) {
            return Ok(h.clone());
        }
        let mut projects = self.projects.write();
        if let Some(h) = projects.get(id) {
            return Ok(h.clone());
        }
        let dir = self.project_dir(id);
        if !dir.exists() {
            return Err(AppError::not_found(format!("no project `{id}`")));
        }
        let handle = Arc::new(ProjectHandle::new(Project::open(dir)?));
        projects.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    pub fn create_project(&self, req: &CreateProject) -> AppResult<(Arc<ProjectHandle>, BTreeMap<String, String>)> {
        let id = req.id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        validate_id(&id)?;
        let mut projects = self.projects.write();
        if projects.contains_key(&id) {
            return Err(AppError::conflict(format!("project `{id}` already exists")));
        }
        let (project, tokens) = Project::create(self.project_dir(&id), &id, req)?;
        let handle = Arc::new(ProjectHandle::new(project));
        projects.insert(id, handle.clone());
        Ok((handle, tokens))
    }

    pub fn job(&self, id: &str) -> AppResult<JobStatus> {
        self.jobs.lock().get(id).cloned().ok_or_else(|| AppError::not_found(format!("no job `{id}`")))
    }

    /// Queues a job. Fails with 409 while another exclusive job of the same
    /// project is queued or running.
    pub fn submit_job(self: &Arc<Self>, handle: Arc<ProjectHandle>, spec: JobSpec) -> AppResult<JobStatus> {
        let status = {
            let mut jobs = self.jobs.lock();
            if spec.kind.exclusive() {
                if let Some(other) = jobs
                    .values()
                    .find(|j| j.project_id == handle.id && j.kind.exclusive() && !j.state.is_terminal())
                {
                    return Err(AppError::conflict(format!(
                        "job {} ({:?}) is still {:?} for this project",
                        other.id, other.kind, other.state
                    )));
                }
            }
            let status = JobStatus::queued(&handle.id, spec.clone());
            jobs.insert(status.id.clone(), status.clone());
            status
        };
        let state = self.clone();
        let job_id = status.id.clone();
        tokio::spawn(async move {
            let _turn = handle.runner.clone().lock_owned().await;
            state.update(&job_id, |j| {
                j.state = JobState::Running;
                j.started_at = Some(jobs::now());
            });
            let h = handle.clone();
            let outcome = tokio::task::spawn_blocking(move || jobs::run_job(&h.state, &spec))
                .await
                .unwrap_or_else(|e| Err(AppError::internal(format!("job panicked: {e}"))));
            state.update(&job_id, |j| {
                j.finished_at = Some(jobs::now());
                match outcome {
                    Ok(out) => {
                        j.state = JobState::Done;
                        j.result_ref = Some(out.result_ref);
                        j.result = Some(out.result);
                    }
                    Err(e) => {
                        log::warn!("job {} failed: {}", j.id, e);
                        j.state = JobState::Failed;
                        j.error = Some(e.message);
                    }
                }
            });
        });
        Ok(status)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(j) = self.jobs.lock().get_mut(id) {
            f(j);
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| AppError::internal(e.to_string()))?
}

/// Runs `f` on the locked project off the async threads.
async fn with_project<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Project) -> AppResult<T> + Send + 'static,
) -> AppResult<T> {
    let handle = state.project(id)?;
    blocking(move || f(&mut handle.state.lock())).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/corpus", post(ingest_corpus).layer(DefaultBodyLimit::max(1 << 30)))
        .route("/projects/{id}/corpus/stats", get(corpus_stats))
        .route("/projects/{id}/iterations/current", get(current_iteration))
        .route("/projects/{id}/iterations/{k}/batch", get(batch))
        .route("/projects/{id}/iterations/advance", post(advance))
        .route("/projects/{id}/labels", post(submit_label))
        .route("/projects/{id}/metrics/learning-curve", get(learning_curve))
        .route("/projects/{id}/distances", get(distances))
        .route("/projects/{id}/self-train", post(self_train))
        .route("/projects/{id}/train", post(train))
        .route("/projects/{id}/evaluate", post(evaluate))
        .route("/projects/{id}/agreement", get(agreement))
        .route("/projects/{id}/agreement/design", get(get_design).post(post_design))
        .route("/projects/{id}/criteria", get(get_criteria).post(post_criteria))
        .route("/jobs/{id}", get(get_job))
        .with_state(state)
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| AppError::unprocessable(format!("invalid request body: {e}")))
}

async fn create_project(State(state): State<Arc<AppState>>, body: axum::body::Bytes) -> AppResult<Response> {
    let req: CreateProject = json_body(&body)?;
    let st = state.clone();
    let (view, tokens) = blocking(move || {
        let (handle, tokens) = st.create_project(&req)?;
        let view = handle.state.lock().view();
        Ok((view, tokens))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "project": view, "tokens": tokens })) ).into_response())
}

async fn get_project(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    with_project(&state, &id, |p| Ok(Json(json!(p.view())))).await
}

async fn ingest_corpus(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> AppResult<Json<Value>> {
    let req: IngestRequest = json_body(&body)?;
    with_project(&state, &id, move |p| Ok(Json(json!(p.ingest_request(&req)?)))).await
}

async fn corpus_stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    with_project(&state, &id, |p| Ok(Json(json!(p.corpus_stats()?)))).await
}

async fn current_iteration(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    with_project(&state, &id, |p| {
        let (iteration, progress, criteria_version) = p.current_iteration()?;
        Ok(Json(json!({ "iteration": iteration, "progress": progress, "criteria_version": criteria_version })))
    })
    .await
}

#[derive(Deserialize)]
struct BatchQuery {
    annotator: Option<String>,
}

async fn batch(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
    Query(q): Query<BatchQuery>,
) -> AppResult<Json<Value>> {
    with_project(&state, &id, move |p| Ok(Json(json!(p.batch(k, q.annotator.as_deref())?)))).await
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

#[derive(Deserialize)]
struct LabelBody {
    #[serde(flatten)]
    submission: LabelSubmission,
    #[serde(default)]
    idempotency_key: Option<String>,
}

async fn submit_label(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> AppResult<Json<Value>> {
    let token = bearer(&headers).map(str::to_string);
    let header_key = headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string);
    let handle = state.project(&id)?;
    blocking(move || {
        let mut p = handle.state.lock();
        let annotator = token
            .as_deref()
            .and_then(|t| p.annotator_for_token(t))
            .map(str::to_string)
            .ok_or_else(|| AppError::forbidden("missing or unknown annotator token"))?;
        let body: LabelBody = json_body(&body)?;
        let key = header_key
            .or(body.idempotency_key)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| AppError::unprocessable("an Idempotency-Key header is required"))?;
        Ok(Json(p.submit_label(&annotator, &body.submission, Some(&key))?))
    })
    .await
}

fn accepted(status: JobStatus) -> Response {
    (StatusCode::ACCEPTED, Json(status)).into_response()
}

async fn advance(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    let handle = state.project(&id)?;
    Ok(accepted(state.submit_job(handle, JobSpec::new(JobKind::Advance))?))
}

async fn train(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    let handle = state.project(&id)?;
    Ok(accepted(state.submit_job(handle, JobSpec::new(JobKind::Train))?))
}

async fn evaluate(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    let handle = state.project(&id)?;
    Ok(accepted(state.submit_job(handle, JobSpec::new(JobKind::Evaluate))?))
}

#[derive(Deserialize)]
struct SelfTrainBody {
    f_pos: f64,
    f_neg: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    view: Option<String>,
}

async fn self_train(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> AppResult<Response> {
    let body: SelfTrainBody = json_body(&body)?;
    let config = SelfTrainConfig { f_pos: body.f_pos, f_neg: body.f_neg, seed: body.seed };
    config.validate()?;
    let view = body.view.as_deref().map(parse_view).transpose()?;
    let handle = state.project(&id)?;
    let spec = JobSpec { kind: JobKind::SelfTrain, view, self_train: Some(config) };
    Ok(accepted(state.submit_job(handle, spec)?))
}

fn parse_view(s: &str) -> AppResult<View> {
    s.parse().map_err(AppError::unprocessable)
}

#[derive(Deserialize)]
struct CurveQuery {
    from: Option<usize>,
    to: Option<usize>,
}

fn csv_response(text: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], Body::from(text)).into_response()
}

async fn learning_curve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CurveQuery>,
) -> AppResult<Response> {
    let csv = with_project(&state, &id, move |p| {
        let range = match (q.from, q.to) {
            (None, None) => None,
            (from, to) => {
                let last = p.learner()?.iterations().len().saturating_sub(1);
                Some(from.unwrap_or(0)..=to.unwrap_or(last))
            }
        };
        p.learning_curve_csv(range)
    })
    .await?;
    Ok(csv_response(csv))
}

#[derive(Deserialize)]
struct DistanceQuery {
    set: Option<String>,
    format: Option<String>,
    view: Option<String>,
    mode: Option<String>,
}

async fn distances(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<DistanceQuery>,
) -> AppResult<Response> {
    let set = q.set.as_deref().map(|s| s.parse::<PostSet>().map_err(AppError::unprocessable)).transpose()?;
    let view = q.view.as_deref().map(parse_view).transpose()?;
    let mode = match q.mode.as_deref() {
        None | Some("resubstitution") => QuadrantMode::Resubstitution,
        Some("out-of-fold") | Some("oof") => QuadrantMode::OutOfFold,
        Some(other) => return Err(AppError::unprocessable(format!("unknown mode `{other}`"))),
    };
    let csv = match q.format.as_deref() {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => return Err(AppError::unprocessable(format!("unknown format `{other}` (csv or json)"))),
    };
    let (view, dist) = with_project(&state, &id, move |p| p.distances(view, mode)).await?;
    if csv {
        let mut out = Vec::new();
        dist.write_csv(set, &mut out)?;
        return Ok(csv_response(String::from_utf8(out).expect("csv is utf-8")));
    }
    let body = match set {
        Some(s) => json!({ "view": view, "summary": dist.set_summary(s) }),
        None => json!({ "view": view, "summary": dist.summary }),
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct AgreementQuery {
    scope: Option<AgreementScope>,
    iteration: Option<usize>,
}

async fn agreement(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AgreementQuery>,
) -> AppResult<Json<Value>> {
    let scope = q.scope.unwrap_or(AgreementScope::Overlap);
    with_project(&state, &id, move |p| Ok(Json(json!(p.agreement(scope, q.iteration)?)))).await
}

async fn get_design(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    with_project(&state, &id, |p| {
        let d = p.design().ok_or_else(|| AppError::not_found("no rating design has been created"))?;
        Ok(Json(json!({ "design": d, "per_rater": d.per_rater() })))
    })
    .await
}

async fn post_design(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> AppResult<Response> {
    let req: DesignRequest = json_body(&body)?;
    let creating = req.ratings.is_none();
    let body = with_project(&state, &id, move |p| {
        let d = p.design_request(&req)?;
        Ok(json!({ "design": d, "per_rater": d.per_rater() }))
    })
    .await?;
    let status = if creating { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(body)).into_response())
}

async fn get_criteria(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    with_project(&state, &id, |p| {
        let versions = p.criteria()?;
        Ok(Json(json!({ "current": versions.last(), "versions": versions })))
    })
    .await
}

#[derive(Deserialize)]
struct CriteriaBody {
    text: String,
    #[serde(default)]
    changelog: String,
}

async fn post_criteria(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> AppResult<Response> {
    let body: CriteriaBody = json_body(&body)?;
    let c = with_project(&state, &id, move |p| p.add_criteria(&body.text, &body.changelog)).await?;
    Ok((StatusCode::CREATED, Json(c)).into_response())
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<JobStatus>> {
    Ok(Json(state.job(&id)?))
}
