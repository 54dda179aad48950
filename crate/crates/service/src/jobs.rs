//! Background jobs. Train, advance and self-train are mutually exclusive per
//! project; every job of a project runs serially and works on a snapshot of
//! the learner taken when it starts.

use parking_lot::Mutex;
use perfsieve::evaluation::{self, LearningCurveRow, View};
use perfsieve::self_training::{SelfTrainConfig, SelfTrainTable};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{AppError, AppResult};
use crate::project::Project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Advance,
    SelfTrain,
    Evaluate,
}

impl JobKind {
    /// Kinds of which at most one may be queued or running per project.
    pub fn exclusive(self) -> bool {
        !matches!(self, JobKind::Evaluate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub kind: JobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<View>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_train: Option<SelfTrainConfig>,
}

impl JobSpec {
    pub fn new(kind: JobKind) -> Self {
        Self { kind, view: None, self_train: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub project_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub spec: JobSpec,
    pub created_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    /// Content hash of the stored result.
    pub result_ref: Option<String>,
    pub result: Option<Value>,
    pub error: Option<String>,
}

impl JobStatus {
    pub fn queued(project_id: &str, spec: JobSpec) -> Self {
        Self {
            id: uuid::Uuid::new_v4().simple().to_string(),
            project_id: project_id.to_string(),
            kind: spec.kind,
            state: JobState::Queued,
            spec,
            created_at: now(),
            started_at: None,
            finished_at: None,
            result_ref: None,
            result: None,
            error: None,
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub result_ref: String,
    pub result: Value,
}

/// Runs a job to completion: snapshot under the lock, compute without it,
/// then commit and store the result under the lock again.
pub fn run_job(project: &Mutex<Project>, spec: &JobSpec) -> AppResult<JobOutput> {
    let (base, baseline_iteration) = {
        let p = project.lock();
        let base = p.snapshot()?;
        let closed = base.iterations().iter().rev().find(|it| it.is_closed()).map(|it| it.index);
        (base, closed)
    };
    let result = match spec.kind {
        JobKind::Train => {
            let trained = base.train_views();
            let refs: serde_json::Map<String, Value> = trained
                .models
                .iter()
                .map(|(v, m)| (v.to_string(), json!(perfsieve::active_loop::model_ref(m))))
                .collect();
            let result = json!({ "models": refs, "skipped": skipped_json(&trained.skipped) });
            if trained.models.is_empty() {
                return Err(AppError::unprocessable(format!("no view could be trained: {}", reasons(&trained.skipped))));
            }
            project.lock().commit_models(trained.models)?;
            result
        }
        JobKind::Advance => {
            let mut advanced = base.clone();
            advanced.advance()?;
            let closed = &advanced.iterations()[advanced.iterations().len() - 2];
            let next = advanced.current_iteration();
            let result = json!({
                "closed_iteration": closed.index,
                "model_refs": closed.model_refs,
                "artifacts": closed.artifacts,
                "next_iteration": {
                    "index": next.index,
                    "batch": next.batch,
                    "overlap_fraction": next.overlap_fraction,
                    "shared": next.shared().len(),
                },
            });
            project.lock().commit_advance(&base, advanced)?;
            result
        }
        JobKind::SelfTrain => {
            let config = spec.self_train.ok_or_else(|| AppError::unprocessable("self-train needs f_pos and f_neg"))?;
            let view = spec.view.unwrap_or(base.config().batch_view);
            let outcome = base.self_train(view, &config)?;
            let mut table = SelfTrainTable::from(outcome.report.clone());
            table.baseline_iteration = baseline_iteration;
            json!({
                "view": view,
                "report": outcome.report,
                "pseudo_examples": outcome.selection.pseudo,
                "table": table.render_text(),
            })
        }
        JobKind::Evaluate => {
            let mut views = Vec::new();
            let current = base.current_iteration().index;
            for view in View::ALL {
                let data = base.view_examples(view, None);
                let entry = match evaluation::cross_validate(&data.examples, &base.config().cv, &base.config().train) {
                    Ok(report) => json!({
                        "view": view,
                        "labeled": data.examples.len(),
                        "metrics": LearningCurveRow::from_report(current, view, &report),
                        "report": report,
                    }),
                    Err(e) => json!({ "view": view, "labeled": data.examples.len(), "error": e.to_string() }),
                };
                views.push(entry);
            }
            let curve = base.learning_curve(None);
            json!({ "iteration": current, "views": views, "learning_curve": curve.rows })
        }
    };
    let result_ref = project.lock().store_artifact(&result)?;
    Ok(JobOutput { result_ref, result })
}

fn skipped_json(skipped: &[(View, String)]) -> Value {
    Value::Object(skipped.iter().map(|(v, r)| (v.to_string(), json!(r))).collect())
}

fn reasons(skipped: &[(View, String)]) -> String {
    skipped.iter().map(|(v, r)| format!("{v}: {r}")).collect::<Vec<_>>().join("; ")
}
