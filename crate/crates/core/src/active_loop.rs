//! The annotation loop: uncertainty-sampled batches, two-annotator assignment
//! with optional overlap, an append-only label journal, versioned annotation
//! criteria and per-iteration retraining of the A, B and pooled models.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agreement::{self, AgreementError, AgreementReport, RatingMatrix};
use crate::corpus::Corpus;
use crate::evaluation::{
    self, CvConfig, DistanceDistribution, DistanceSummary, EvalError, LearningCurveRow, QuadrantMode, View,
};
use crate::features::{SparseVector, Vocabulary};
use crate::fraction_of;
use crate::label::{Example, Label};
use crate::scalar::Real;
use crate::self_training::{self, SelfTrainConfig, SelfTrainError, SelfTrainOutcome};
use crate::svm::{self, LinearModel, SvmError, TrainConfig};
use crate::FeatureVector;

pub const DEFAULT_BATCH_SIZE: usize = 100;

/// Default criteria text shipped as version 1.
pub const DEFAULT_CRITERIA: &str = "\
Label a post (question or answer) POSITIVE when it is about how fast, scalable or \
resource-hungry a particular software component is: a database, web server, \
framework, platform, library, CMS and so on, i.e. something one could pick when \
building a system.

Label it NEGATIVE when the performance under discussion belongs to a programming \
language, an operating environment, a development tool (compiler, IDE, build \
system), a specific way of writing code (query formulation, parsing approach), or \
the tuning of a component's settings; also when the component mentioned is a tool \
for measuring performance.

These negative cases become positive when the discussion clearly stems from poor \
performance of a specific component.";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("annotator `{0}` is not on the project roster")]
    UnknownAnnotator(String),
    #[error("post {0} is not in the corpus")]
    UnknownPost(u64),
    #[error("certainty must be between 1 and 5, got {0}")]
    InvalidCertainty(u8),
    #[error("criteria version {submitted} is stale; current version is {current}")]
    StaleCriteria { submitted: u32, current: u32 },
    #[error("iteration {0} is closed")]
    IterationClosed(usize),
    #[error("iteration {submitted} does not exist yet (current is {current})")]
    FutureIteration { submitted: usize, current: usize },
    #[error("post {post_id} is not assigned to `{annotator}` in the open iteration")]
    NotAssigned { post_id: u64, annotator: String },
    #[error("post {0} already has a label from another iteration")]
    AlreadyLabeled(u64),
    #[error("seed labels are only accepted while iteration 0 is open")]
    SeedingClosed,
    #[error("iteration is incomplete; missing labels: {}", format_missing(.0))]
    Incomplete(Vec<(u64, String)>),
    #[error("no unlabeled posts remain")]
    PoolExhausted,
    #[error("cannot select the next batch: the {view} model could not be trained ({reason})")]
    NoBatchModel { view: View, reason: String },
    #[error("no {0} model has been trained yet")]
    NoModel(View),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("criteria text must not be empty")]
    EmptyCriteria,
    #[error("journal replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Train(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    SelfTrain(#[from] SelfTrainError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
}

fn format_missing(missing: &[(u64, String)]) -> String {
    missing.iter().map(|(p, a)| format!("(post {p}, {a})")).collect::<Vec<_>>().join(", ")
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Returns `min(k, |pool|)` post ids with the smallest absolute distance to the
/// hyperplane, ordered by `(|distance|, id)`.
pub fn select_batch<T: Real>(
    model: &LinearModel<T>,
    pool: &[(u64, &SparseVector<T>)],
    k: usize,
) -> Result<Vec<u64>, LoopError> {
    if pool.is_empty() {
        return Err(LoopError::PoolExhausted);
    }
    if k == 0 {
        return Err(LoopError::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut scored: Vec<(f64, u64)> =
        pool.iter().map(|&(id, x)| (model.score(x).distance.as_f64().abs(), id)).collect();
    let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignments: BTreeMap<String, Vec<u64>>,
    /// Posts given to both annotators (the head of the batch).
    pub shared: Vec<u64>,
}

/// The first `floor(f * |batch|)` posts go to both annotators; the rest
/// alternate between them starting with the first. Lists keep batch order.
pub fn make_assignment(batch: &[u64], annotators: &[String; 2], overlap_fraction: f64) -> Assignment {
    let shared_n = fraction_of(overlap_fraction.clamp(0.0, 1.0), batch.len());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, &post) in batch.iter().enumerate() {
        if i < shared_n {
            a.push(post);
            b.push(post);
        } else if (i - shared_n).is_multiple_of(2) {
            a.push(post);
        } else {
            b.push(post);
        }
    }
    let mut assignments = BTreeMap::new();
    assignments.insert(annotators[0].clone(), a);
    assignments.insert(annotators[1].clone(), b);
    Assignment { assignments, shared: batch[..shared_n].to_vec() }
}

/// Overlap fraction per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OverlapSchedule {
    Fixed { fraction: f64 },
    /// Linear from `start` (iteration 1) to `end` (iteration `iterations`), then flat.
    Linear { start: f64, end: f64, iterations: usize },
}

impl Default for OverlapSchedule {
    fn default() -> Self {
        OverlapSchedule::Linear { start: 0.25, end: 0.05, iterations: 8 }
    }
}

impl OverlapSchedule {
    pub fn fraction_for(&self, iteration: usize) -> f64 {
        match *self {
            OverlapSchedule::Fixed { fraction } => fraction,
            OverlapSchedule::Linear { start, end, iterations } => {
                if iterations <= 1 || iteration >= iterations {
                    return if iteration <= 1 && iterations > 1 { start } else { end };
                }
                let t = (iteration.max(1) - 1) as f64 / (iterations - 1) as f64;
                start + (end - start) * t
            }
        }
    }

    fn validate(&self) -> Result<(), LoopError> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        let valid = match *self {
            OverlapSchedule::Fixed { fraction } => ok(fraction),
            OverlapSchedule::Linear { start, end, .. } => ok(start) && ok(end),
        };
        if valid {
            Ok(())
        } else {
            Err(LoopError::InvalidConfig("overlap fractions must lie in [0, 1]".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Exactly two annotators: the first is "A", the second "B".
    pub annotators: [String; 2],
    pub batch_size: usize,
    pub overlap: OverlapSchedule,
    /// Model used to pick the next batch.
    pub batch_view: View,
    pub train: TrainConfig,
    pub cv: CvConfig,
    pub bin_width: f64,
}

impl LoopConfig {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        Self {
            annotators: [a.into(), b.into()],
            batch_size: DEFAULT_BATCH_SIZE,
            overlap: OverlapSchedule::default(),
            batch_view: View::Pooled,
            train: TrainConfig::default(),
            cv: CvConfig::default(),
            bin_width: 0.25,
        }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let [a, b] = &self.annotators;
        if a.is_empty() || b.is_empty() || a == b {
            return Err(LoopError::InvalidConfig("need two distinct, non-empty annotator ids".into()));
        }
        if self.batch_size == 0 {
            return Err(LoopError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.bin_width.is_nan() || self.bin_width <= 0.0 {
            return Err(LoopError::InvalidConfig("bin width must be positive".into()));
        }
        self.overlap.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn annotator_view(&self, annotator: &str) -> Option<View> {
        match self.annotators.iter().position(|a| a == annotator)? {
            0 => Some(View::A),
            _ => Some(View::B),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub post_id: u64,
    pub label: Label,
    pub annotator_id: String,
    pub iteration: usize,
    #[serde(default)]
    pub certainty: Option<u8>,
    #[serde(default)]
    pub rationale: Option<String>,
    pub criteria_version: u32,
}

/// One line of the label journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub seq: u64,
    pub recorded_at: String,
    #[serde(flatten)]
    pub example: LabeledExample,
}

/// Current label per (post, annotator); later events overwrite earlier ones.
pub type LabelState = BTreeMap<(u64, String), LabeledExample>;

pub fn replay_journal(events: &[LabelEvent]) -> LabelState {
    let mut state = LabelState::new();
    for e in events {
        state.insert((e.example.post_id, e.example.annotator_id.clone()), e.example.clone());
    }
    state
}

/// SHA-256 over the canonical JSON of a label state.
pub fn label_state_hash(state: &LabelState) -> String {
    let entries: Vec<&LabeledExample> = state.values().collect();
    hex::encode(Sha256::digest(serde_json::to_vec(&entries).expect("labels serialize")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationCriteria {
    pub version: u32,
    pub text: String,
    pub changelog: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaLog {
    versions: Vec<AnnotationCriteria>,
}

impl Default for CriteriaLog {
    fn default() -> Self {
        Self {
            versions: vec![AnnotationCriteria {
                version: 1,
                text: DEFAULT_CRITERIA.to_string(),
                changelog: "initial criteria".into(),
                created_at: now(),
            }],
        }
    }
}

impl CriteriaLog {
    pub fn from_versions(versions: Vec<AnnotationCriteria>) -> Result<Self, LoopError> {
        if versions.is_empty() {
            return Err(LoopError::Replay("criteria log is empty".into()));
        }
        if versions.windows(2).any(|w| w[1].version <= w[0].version) || versions[0].version < 1 {
            return Err(LoopError::Replay("criteria versions must strictly increase from 1".into()));
        }
        if versions.iter().any(|c| c.text.trim().is_empty()) {
            return Err(LoopError::EmptyCriteria);
        }
        Ok(Self { versions })
    }

    pub fn current(&self) -> &AnnotationCriteria {
        self.versions.last().expect("criteria log is never empty")
    }

    pub fn versions(&self) -> &[AnnotationCriteria] {
        &self.versions
    }

    pub fn add(&mut self, text: &str, changelog: &str) -> Result<&AnnotationCriteria, LoopError> {
        if text.trim().is_empty() {
            return Err(LoopError::EmptyCriteria);
        }
        let version = self.current().version + 1;
        self.versions.push(AnnotationCriteria {
            version,
            text: text.to_string(),
            changelog: changelog.to_string(),
            created_at: now(),
        });
        Ok(self.current())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationStatus {
    Open,
    Complete,
}

/// Evaluation results recorded when an iteration is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationArtifacts {
    pub metrics: Vec<LearningCurveRow>,
    /// Views that could not be trained or cross-validated, with the reason.
    pub skipped: Vec<(View, String)>,
    pub labeled_counts: BTreeMap<View, usize>,
    /// Overlap posts excluded from the pooled view for conflicting labels.
    pub conflicts: Vec<u64>,
    pub distances: Option<DistanceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub index: usize,
    /// Posts in uncertainty order (most uncertain first).
    pub batch: Vec<u64>,
    pub assignments: BTreeMap<String, Vec<u64>>,
    pub overlap_fraction: f64,
    pub status: IterationStatus,
    pub opened_at: String,
    #[serde(default)]
    pub closed_at: Option<String>,
    /// Content hashes of the models trained when the iteration was closed.
    #[serde(default)]
    pub model_refs: BTreeMap<View, String>,
    #[serde(default)]
    pub artifacts: Option<IterationArtifacts>,
}

impl Iteration {
    fn open(index: usize, batch: Vec<u64>, assignment: Assignment, overlap_fraction: f64) -> Self {
        Self {
            index,
            batch,
            assignments: assignment.assignments,
            overlap_fraction,
            status: IterationStatus::Open,
            opened_at: now(),
            closed_at: None,
            model_refs: BTreeMap::new(),
            artifacts: None,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed_at.is_some()
    }

    pub fn is_assigned(&self, post_id: u64, annotator: &str) -> bool {
        self.assignments.get(annotator).is_some_and(|posts| posts.contains(&post_id))
    }

    /// Posts assigned to both annotators.
    pub fn shared(&self) -> Vec<u64> {
        let mut lists = self.assignments.values();
        match (lists.next(), lists.next()) {
            (Some(a), Some(b)) => {
                let b: BTreeSet<u64> = b.iter().copied().collect();
                a.iter().copied().filter(|p| b.contains(p)).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: usize,
    pub labeled: usize,
    pub remaining: usize,
}

/// Vectorized posts of the project corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PostPool {
    ids: Vec<u64>,
    vectors: Vec<FeatureVector>,
    position: HashMap<u64, usize>,
}

impl PostPool {
    pub fn from_corpus(corpus: &Corpus, vocabulary: &Vocabulary) -> Self {
        let include_title = vocabulary.config().include_title;
        Self::new(
            corpus
                .posts()
                .iter()
                .map(|p| (p.id, vocabulary.vectorize(&p.document_text(include_title))))
                .collect(),
        )
    }

    pub fn new(entries: Vec<(u64, FeatureVector)>) -> Self {
        let position = entries.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
        let (ids, vectors) = entries.into_iter().unzip();
        Self { ids, vectors, position }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.position.contains_key(&id)
    }

    pub fn vector(&self, id: u64) -> Option<&FeatureVector> {
        self.position.get(&id).map(|&i| &self.vectors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &FeatureVector)> {
        self.ids.iter().copied().zip(self.vectors.iter())
    }
}

/// Training examples of one view.
#[derive(Debug, Clone)]
pub struct ViewData {
    pub examples: Vec<Example<f64>>,
    /// Posts left out of the pooled view because the annotators disagree.
    pub conflicts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub post_id: u64,
    pub iteration: usize,
    pub labels: Vec<LabeledExample>,
    /// Sum of both certainties (unset counts as 0).
    pub combined_certainty: u8,
    /// Both annotators reported certainty 4 or 5.
    pub both_confident: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<LearningCurveRow>,
    /// Requested iterations that are not closed yet.
    pub skipped_iterations: Vec<usize>,
    pub skipped_views: Vec<(usize, View, String)>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        evaluation::write_learning_curve_csv(&self.rows, &mut out).expect("in-memory write");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

/// Models trained on the current labels, plus views that could not be trained.
pub struct TrainedViews {
    pub models: BTreeMap<View, LinearModel<f64>>,
    pub skipped: Vec<(View, String)>,
}

/// Content hash identifying a model.
pub fn model_ref(model: &LinearModel<f64>) -> String {
    let bytes = serde_json::to_vec(&model.to_file(None)).expect("model serializes");
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// State of one annotation project.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    config: LoopConfig,
    pool: Arc<PostPool>,
    criteria: CriteriaLog,
    iterations: Vec<Iteration>,
    labels: LabelState,
    journal: Vec<LabelEvent>,
    models: BTreeMap<View, LinearModel<f64>>,
}

impl ActiveLearner {
    /// Starts a project with iteration 0 open for seed labels.
    pub fn new(config: LoopConfig, pool: Arc<PostPool>) -> Result<Self, LoopError> {
        config.validate()?;
        let seed = Iteration::open(0, Vec::new(), make_assignment(&[], &config.annotators, 0.0), 0.0);
        Ok(Self {
            config,
            pool,
            criteria: CriteriaLog::default(),
            iterations: vec![seed],
            labels: LabelState::new(),
            journal: Vec::new(),
            models: BTreeMap::new(),
        })
    }

    /// Rebuilds a project from persisted parts, replaying the label journal.
    pub fn restore(
        config: LoopConfig,
        pool: Arc<PostPool>,
        criteria: CriteriaLog,
        iterations: Vec<Iteration>,
        journal: Vec<LabelEvent>,
        models: BTreeMap<View, LinearModel<f64>>,
    ) -> Result<Self, LoopError> {
        config.validate()?;
        if iterations.is_empty() {
            return Err(LoopError::Replay("no iterations".into()));
        }
        if iterations.iter().enumerate().any(|(i, it)| it.index != i) {
            return Err(LoopError::Replay("iteration indices are not contiguous".into()));
        }
        if journal.windows(2).any(|w| w[1].seq <= w[0].seq) {
            return Err(LoopError::Replay("journal sequence numbers must increase".into()));
        }
        let labels = replay_journal(&journal);
        Ok(Self { config, pool, criteria, iterations, labels, journal, models })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn pool(&self) -> &Arc<PostPool> {
        &self.pool
    }

    pub fn criteria(&self) -> &CriteriaLog {
        &self.criteria
    }

    pub fn add_criteria(&mut self, text: &str, changelog: &str) -> Result<&AnnotationCriteria, LoopError> {
        self.criteria.add(text, changelog)
    }

    pub fn iterations(&self) -> &[Iteration] {
        &self.iterations
    }

    pub fn current_iteration(&self) -> &Iteration {
        self.iterations.last().expect("at least one iteration")
    }

    pub fn labels(&self) -> &LabelState {
        &self.labels
    }

    pub fn journal(&self) -> &[LabelEvent] {
        &self.journal
    }

    pub fn models(&self) -> &BTreeMap<View, LinearModel<f64>> {
        &self.models
    }

    pub fn state_hash(&self) -> String {
        label_state_hash(&self.labels)
    }

    pub fn progress(&self) -> Progress {
        let it = self.current_iteration();
        let total: usize = it.assignments.values().map(Vec::len).sum();
        let labeled = it
            .assignments
            .iter()
            .flat_map(|(a, posts)| posts.iter().map(move |p| (*p, a)))
            .filter(|(p, a)| self.labels.contains_key(&(*p, (*a).clone())))
            .count();
        Progress { iteration: it.index, labeled, remaining: total - labeled }
    }

    /// Assigned (post, annotator) pairs of the open iteration without a label.
    pub fn missing_labels(&self) -> Vec<(u64, String)> {
        let it = self.current_iteration();
        let mut missing = Vec::new();
        for (annotator, posts) in &it.assignments {
            for &p in posts {
                if !self.labels.contains_key(&(p, annotator.clone())) {
                    missing.push((p, annotator.clone()));
                }
            }
        }
        missing
    }

    fn validate_common(&self, example: &LabeledExample) -> Result<(), LoopError> {
        if self.config.annotator_view(&example.annotator_id).is_none() {
            return Err(LoopError::UnknownAnnotator(example.annotator_id.clone()));
        }
        if !self.pool.contains(example.post_id) {
            return Err(LoopError::UnknownPost(example.post_id));
        }
        if let Some(c) = example.certainty {
            if !(1..=5).contains(&c) {
                return Err(LoopError::InvalidCertainty(c));
            }
        }
        let current = self.criteria.current().version;
        if example.criteria_version != current {
            return Err(LoopError::StaleCriteria { submitted: example.criteria_version, current });
        }
        Ok(())
    }

    fn append(&mut self, example: LabeledExample) -> LabelEvent {
        let seq = self.journal.last().map_or(1, |e| e.seq + 1);
        let event = LabelEvent { seq, recorded_at: now(), example };
        self.labels
            .insert((event.example.post_id, event.example.annotator_id.clone()), event.example.clone());
        self.journal.push(event.clone());
        self.refresh_status();
        event
    }

    fn refresh_status(&mut self) {
        let complete = self.missing_labels().is_empty();
        let it = self.iterations.last_mut().expect("at least one iteration");
        if !it.is_closed() {
            it.status = if complete { IterationStatus::Complete } else { IterationStatus::Open };
        }
    }

    /// Records a label for a post assigned in the open iteration. Resubmission
    /// overwrites the current label; both events stay in the journal.
    pub fn record_label(&mut self, example: LabeledExample) -> Result<LabelEvent, LoopError> {
        self.validate_common(&example)?;
        let current = self.current_iteration();
        if example.iteration < current.index {
            return Err(LoopError::IterationClosed(example.iteration));
        }
        if example.iteration > current.index {
            return Err(LoopError::FutureIteration { submitted: example.iteration, current: current.index });
        }
        if !current.is_assigned(example.post_id, &example.annotator_id) {
            let earlier = self.iterations[..current.index]
                .iter()
                .rev()
                .find(|it| it.is_assigned(example.post_id, &example.annotator_id));
            return Err(match earlier {
                Some(it) => LoopError::IterationClosed(it.index),
                None => LoopError::NotAssigned {
                    post_id: example.post_id,
                    annotator: example.annotator_id.clone(),
                },
            });
        }
        Ok(self.append(example))
    }

    /// Adds a pre-existing label to iteration 0, assigning the post to the
    /// annotator as a side effect.
    pub fn seed_label(&mut self, mut example: LabeledExample) -> Result<LabelEvent, LoopError> {
        self.validate_common(&example)?;
        if self.iterations.len() != 1 {
            return Err(LoopError::SeedingClosed);
        }
        example.iteration = 0;
        let it = &mut self.iterations[0];
        if !it.batch.contains(&example.post_id) {
            it.batch.push(example.post_id);
        }
        let list = it.assignments.entry(example.annotator_id.clone()).or_default();
        if !list.contains(&example.post_id) {
            list.push(example.post_id);
        }
        Ok(self.append(example))
    }

    /// Seeds while iteration 0 is open, otherwise records against the open batch.
    pub fn submit(&mut self, example: LabeledExample) -> Result<LabelEvent, LoopError> {
        if self.iterations.len() == 1 {
            self.seed_label(example)
        } else {
            self.record_label(example)
        }
    }

    /// Training examples for `view` from labels of iterations `<= up_to`.
    pub fn view_examples(&self, view: View, up_to: Option<usize>) -> ViewData {
        let in_range = |e: &LabeledExample| up_to.is_none_or(|k| e.iteration <= k);
        let vector = |id: u64| self.pool.vector(id).expect("labels refer to pool posts").clone();
        match view {
            View::A | View::B => {
                let annotator = &self.config.annotators[if view == View::A { 0 } else { 1 }];
                let examples = self
                    .labels
                    .values()
                    .filter(|e| &e.annotator_id == annotator && in_range(e))
                    .map(|e| Example::new(e.post_id, vector(e.post_id), e.label))
                    .collect();
                ViewData { examples, conflicts: Vec::new() }
            }
            View::Pooled => {
                let mut by_post: BTreeMap<u64, BTreeSet<Label>> = BTreeMap::new();
                for e in self.labels.values().filter(|e| in_range(e)) {
                    by_post.entry(e.post_id).or_default().insert(e.label);
                }
                let mut examples = Vec::new();
                let mut conflicts = Vec::new();
                for (post, labels) in by_post {
                    if labels.len() == 1 {
                        let label = *labels.iter().next().expect("one label");
                        examples.push(Example::new(post, vector(post), label));
                    } else {
                        conflicts.push(post);
                    }
                }
                ViewData { examples, conflicts }
            }
        }
    }

    /// Trains every view that has both classes.
    pub fn train_views(&self) -> TrainedViews {
        let mut models = BTreeMap::new();
        let mut skipped = Vec::new();
        for view in View::ALL {
            let data = self.view_examples(view, None);
            match svm::train(&data.examples, &self.config.train) {
                Ok(m) => {
                    models.insert(view, m);
                }
                Err(e) => skipped.push((view, e.to_string())),
            }
        }
        TrainedViews { models, skipped }
    }

    /// Retrains on current labels without opening a new iteration.
    pub fn retrain(&mut self) -> Vec<(View, String)> {
        let trained = self.train_views();
        self.models = trained.models;
        trained.skipped
    }

    /// Installs models trained elsewhere, e.g. on a snapshot of this learner.
    pub fn set_models(&mut self, models: BTreeMap<View, LinearModel<f64>>) {
        self.models = models;
    }

    /// Posts without any label that are not part of the open batch.
    pub fn unlabeled_pool(&self) -> Vec<(u64, &FeatureVector)> {
        let labeled: BTreeSet<u64> = self.labels.keys().map(|(p, _)| *p).collect();
        let open: BTreeSet<u64> = self.current_iteration().batch.iter().copied().collect();
        self.pool.iter().filter(|(id, _)| !labeled.contains(id) && !open.contains(id)).collect()
    }

    /// Closes the complete open iteration: retrains the A, B and pooled models,
    /// records cross-validated metrics and distance summaries, selects the next
    /// batch by uncertainty and opens the next iteration.
    pub fn advance(&mut self) -> Result<&Iteration, LoopError> {
        let missing = self.missing_labels();
        if !missing.is_empty() {
            return Err(LoopError::Incomplete(missing));
        }
        let pool = self.unlabeled_pool();
        if pool.is_empty() {
            return Err(LoopError::PoolExhausted);
        }
        let index = self.current_iteration().index;
        let TrainedViews { models, mut skipped } = self.train_views();
        let batch_view = self.config.batch_view;
        let Some(batch_model) = models.get(&batch_view) else {
            let reason = skipped
                .iter()
                .find(|(v, _)| *v == batch_view)
                .map_or_else(|| "no labels".to_string(), |(_, r)| r.clone());
            return Err(LoopError::NoBatchModel { view: batch_view, reason });
        };

        let mut metrics = Vec::new();
        let mut labeled_counts = BTreeMap::new();
        let mut conflicts = Vec::new();
        let mut batch_examples = Vec::new();
        for view in View::ALL {
            let data = self.view_examples(view, None);
            labeled_counts.insert(view, data.examples.len());
            if view == View::Pooled {
                conflicts = data.conflicts.clone();
            }
            if models.contains_key(&view) {
                match evaluation::cross_validate(&data.examples, &self.config.cv, &self.config.train) {
                    Ok(report) => metrics.push(LearningCurveRow::from_report(index, view, &report)),
                    Err(e) => skipped.push((view, e.to_string())),
                }
            }
            if view == batch_view {
                batch_examples = data.examples;
            }
        }
        let distances =
            evaluation::distance_distribution(batch_model, &batch_examples, &pool, self.config.bin_width).summary;
        let next_batch = select_batch(batch_model, &pool, self.config.batch_size)?;

        let model_refs = models.iter().map(|(v, m)| (*v, model_ref(m))).collect();
        let closing = self.iterations.last_mut().expect("at least one iteration");
        closing.status = IterationStatus::Complete;
        closing.closed_at = Some(now());
        closing.model_refs = model_refs;
        closing.artifacts = Some(IterationArtifacts {
            metrics,
            skipped,
            labeled_counts,
            conflicts,
            distances: Some(distances),
        });
        self.models = models;

        let next = index + 1;
        let fraction = self.config.overlap.fraction_for(next);
        let assignment = make_assignment(&next_batch, &self.config.annotators, fraction);
        self.iterations.push(Iteration::open(next, next_batch, assignment, fraction));
        self.refresh_status();
        Ok(self.current_iteration())
    }

    /// Cross-validated metrics per closed iteration and view, using the labels
    /// accumulated up to each iteration.
    pub fn learning_curve(&self, range: Option<RangeInclusive<usize>>) -> LearningCurve {
        let range = range.unwrap_or(0..=self.iterations.len().saturating_sub(1));
        let mut rows = Vec::new();
        let mut skipped_iterations = Vec::new();
        let mut skipped_views = Vec::new();
        for i in range {
            let Some(it) = self.iterations.get(i).filter(|it| it.is_closed()) else {
                log::warn!("learning curve: iteration {i} is not closed; skipped");
                skipped_iterations.push(i);
                continue;
            };
            for view in View::ALL {
                let cached = it
                    .artifacts
                    .as_ref()
                    .and_then(|a| a.metrics.iter().find(|r| r.view == view).cloned());
                if let Some(row) = cached {
                    rows.push(row);
                    continue;
                }
                let data = self.view_examples(view, Some(i));
                match evaluation::cross_validate(&data.examples, &self.config.cv, &self.config.train) {
                    Ok(report) => rows.push(LearningCurveRow::from_report(i, view, &report)),
                    Err(e) => skipped_views.push((i, view, e.to_string())),
                }
            }
        }
        LearningCurve { rows, skipped_iterations, skipped_views }
    }

    /// Distances of labeled (per `view`) and unlabeled posts to the latest
    /// `view` model.
    pub fn distance_distribution(&self, view: View, mode: QuadrantMode) -> Result<DistanceDistribution, LoopError> {
        let model = self.models.get(&view).ok_or(LoopError::NoModel(view))?;
        let data = self.view_examples(view, None);
        let pool = self.unlabeled_pool();
        Ok(match mode {
            QuadrantMode::Resubstitution => {
                evaluation::distance_distribution(model, &data.examples, &pool, self.config.bin_width)
            }
            QuadrantMode::OutOfFold => {
                let cv = CvConfig { runs: 1, ..self.config.cv };
                let outcome = evaluation::cross_validate_augmented(&data.examples, &[], &cv, &self.config.train)?;
                evaluation::distance_distribution_out_of_fold(model, &outcome.runs[0], &pool, self.config.bin_width)
            }
        })
    }

    /// One self-training round on the labels of `view`.
    pub fn self_train(&self, view: View, config: &SelfTrainConfig) -> Result<SelfTrainOutcome<f64>, LoopError> {
        let data = self.view_examples(view, None);
        let pool = self.unlabeled_pool();
        let train = self.config.train.with_seed(self.config.train.seed ^ config.seed);
        Ok(self_training::run_self_training(&data.examples, &pool, config, &self.config.cv, &train)?)
    }

    /// Ratings of posts labeled by both annotators, optionally restricted to
    /// one iteration.
    pub fn overlap_matrix(&self, iteration: Option<usize>) -> RatingMatrix {
        let [a, b] = &self.config.annotators;
        let mut m = RatingMatrix::new();
        for ((post, annotator), e) in &self.labels {
            if annotator != a || iteration.is_some_and(|i| e.iteration != i) {
                continue;
            }
            if let Some(other) = self.labels.get(&(*post, b.clone())) {
                let unit = post.to_string();
                m.insert(&unit, a, e.label.as_str()).expect("one label per pair");
                m.insert(&unit, b, other.label.as_str()).expect("one label per pair");
            }
        }
        m
    }

    pub fn overlap_agreement(&self, iteration: Option<usize>) -> Result<AgreementReport<f64>, LoopError> {
        Ok(agreement::krippendorff_alpha(&self.overlap_matrix(iteration))?)
    }

    /// Overlap posts with differing labels, most certain conflicts first.
    pub fn disagreements(&self) -> Vec<Disagreement> {
        let [a, b] = &self.config.annotators;
        let mut out: Vec<Disagreement> = self
            .labels
            .iter()
            .filter(|((_, ann), _)| ann == a)
            .filter_map(|((post, _), la)| {
                let lb = self.labels.get(&(*post, b.clone()))?;
                (la.label != lb.label).then(|| {
                    let ca = la.certainty.unwrap_or(0);
                    let cb = lb.certainty.unwrap_or(0);
                    Disagreement {
                        post_id: *post,
                        iteration: la.iteration.max(lb.iteration),
                        labels: vec![la.clone(), lb.clone()],
                        combined_certainty: ca + cb,
                        both_confident: ca >= 4 && cb >= 4,
                    }
                })
            })
            .collect();
        out.sort_by(|x, y| y.combined_certainty.cmp(&x.combined_certainty).then(x.post_id.cmp(&y.post_id)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann() -> [String; 2] {
        ["alice".to_string(), "bob".to_string()]
    }

    #[test]
    fn select_batch_examples() {
        let model = LinearModel::from_parts(vec![1.0], 0.0);
        let xs: Vec<FeatureVector> = [-0.5, 0.1, 2.0].iter().map(|&v| SparseVector::from_pairs([(0, v)])).collect();
        let pool: Vec<(u64, &FeatureVector)> = xs.iter().enumerate().map(|(i, x)| (i as u64 + 1, x)).collect();
        assert_eq!(select_batch(&model, &pool, 1).unwrap(), vec![2]);
        assert_eq!(select_batch(&model, &pool, 10).unwrap(), vec![2, 1, 3]);

        let ys: Vec<FeatureVector> = [0.3, -0.3].iter().map(|&v| SparseVector::from_pairs([(0, v)])).collect();
        let pool: Vec<(u64, &FeatureVector)> = ys.iter().enumerate().map(|(i, x)| (i as u64 + 1, x)).collect();
        assert_eq!(select_batch(&model, &pool, 1).unwrap(), vec![1]);
        assert!(matches!(select_batch(&model, &[], 1), Err(LoopError::PoolExhausted)));
    }

    #[test]
    fn assignment_arithmetic() {
        let batch: Vec<u64> = (1..=100).collect();
        let a = make_assignment(&batch, &ann(), 0.25);
        assert_eq!(a.shared.len(), 25);
        assert_eq!(a.assignments["alice"].len(), 63);
        assert_eq!(a.assignments["bob"].len(), 62);
        assert_eq!(&a.assignments["alice"][..25], &batch[..25]);
        assert_eq!(a.assignments["alice"][25], 26);
        assert_eq!(a.assignments["bob"][25], 27);

        let none = make_assignment(&batch, &ann(), 0.0);
        assert!(none.shared.is_empty());
        assert_eq!(none.assignments["alice"].len() + none.assignments["bob"].len(), 100);

        let all = make_assignment(&batch, &ann(), 1.0);
        assert_eq!(all.assignments["alice"], batch);
        assert_eq!(all.assignments["bob"], batch);
    }

    #[test]
    fn overlap_schedule_tapers() {
        let s = OverlapSchedule::default();
        assert!((s.fraction_for(1) - 0.25).abs() < 1e-12);
        assert!((s.fraction_for(8) - 0.05).abs() < 1e-12);
        assert!((s.fraction_for(20) - 0.05).abs() < 1e-12);
        assert!(s.fraction_for(4) < 0.25 && s.fraction_for(4) > 0.05);
        assert_eq!(OverlapSchedule::Fixed { fraction: 0.1 }.fraction_for(3), 0.1);
    }

    #[test]
    fn criteria_versions_increase() {
        let mut log = CriteriaLog::default();
        assert_eq!(log.current().version, 1);
        assert_eq!(log.add("new text", "tightened").unwrap().version, 2);
        assert!(matches!(log.add("  ", ""), Err(LoopError::EmptyCriteria)));
    }

    fn tiny_learner() -> ActiveLearner {
        let entries = (1..=20u64)
            .map(|id| (id, SparseVector::from_pairs([((id % 2) as u32, 1.0), (2 + id as u32, 0.5)]).normalized()))
            .collect();
        let mut config = LoopConfig::new("alice", "bob");
        config.batch_size = 4;
        config.overlap = OverlapSchedule::Fixed { fraction: 0.5 };
        config.cv = CvConfig { folds: 2, runs: 1, base_seed: 0 };
        ActiveLearner::new(config, Arc::new(PostPool::new(entries))).unwrap()
    }

    fn ex(post: u64, who: &str, label: Label, iteration: usize) -> LabeledExample {
        LabeledExample {
            post_id: post,
            label,
            annotator_id: who.into(),
            iteration,
            certainty: None,
            rationale: None,
            criteria_version: 1,
        }
    }

    fn seed(l: &mut ActiveLearner) {
        for post in 1..=8u64 {
            let label = if post % 2 == 1 { Label::Positive } else { Label::Negative };
            let who = if post <= 4 { "alice" } else { "bob" };
            l.submit(ex(post, who, label, 0)).unwrap();
        }
        for post in [1u64, 2, 5, 6] {
            let label = if post % 2 == 1 { Label::Positive } else { Label::Negative };
            let who = if post <= 4 { "bob" } else { "alice" };
            l.submit(ex(post, who, label, 0)).unwrap();
        }
    }

    #[test]
    fn record_label_rules() {
        let mut l = tiny_learner();
        seed(&mut l);
        let next = l.advance().unwrap().clone();
        assert_eq!(next.index, 1);
        assert_eq!(next.batch.len(), 4);
        assert_eq!(next.shared().len(), 2);

        let only_bob = next.assignments["bob"].iter().find(|p| !next.assignments["alice"].contains(p)).copied().unwrap();
        let err = l.record_label(ex(only_bob, "alice", Label::Positive, 1)).unwrap_err();
        assert!(matches!(err, LoopError::NotAssigned { .. }), "{err}");

        let err = l.record_label(ex(only_bob, "carol", Label::Positive, 1)).unwrap_err();
        assert!(matches!(err, LoopError::UnknownAnnotator(_)));

        let mut stale = ex(only_bob, "bob", Label::Positive, 1);
        stale.criteria_version = 7;
        assert!(matches!(l.record_label(stale), Err(LoopError::StaleCriteria { submitted: 7, current: 1 })));

        let mut bad = ex(only_bob, "bob", Label::Positive, 1);
        bad.certainty = Some(6);
        assert!(matches!(l.record_label(bad), Err(LoopError::InvalidCertainty(6))));

        let before = l.progress().labeled;
        l.record_label(ex(only_bob, "bob", Label::Positive, 1)).unwrap();
        assert_eq!(l.progress().labeled, before + 1);
        let journal_len = l.journal().len();
        l.record_label(ex(only_bob, "bob", Label::Negative, 1)).unwrap();
        assert_eq!(l.journal().len(), journal_len + 1);
        assert_eq!(l.labels()[&(only_bob, "bob".to_string())].label, Label::Negative);
        assert_eq!(l.progress().labeled, before + 1);

        assert!(matches!(l.record_label(ex(1, "alice", Label::Positive, 0)), Err(LoopError::IterationClosed(0))));
        assert!(matches!(l.record_label(ex(1, "alice", Label::Positive, 1)), Err(LoopError::IterationClosed(0))));
        assert!(matches!(l.seed_label(ex(15, "alice", Label::Positive, 0)), Err(LoopError::SeedingClosed)));
    }

    #[test]
    fn advance_requires_complete_iteration_and_names_missing() {
        let mut l = tiny_learner();
        seed(&mut l);
        l.advance().unwrap();
        let missing = l.missing_labels();
        for (post, who) in missing.iter().skip(1) {
            l.record_label(ex(*post, who, Label::Negative, 1)).unwrap();
        }
        let err = l.advance().unwrap_err();
        let (post, who) = &missing[0];
        match &err {
            LoopError::Incomplete(m) => assert_eq!(m, &vec![(*post, who.clone())]),
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains(&format!("post {post}")));
    }

    #[test]
    fn pooled_view_excludes_conflicts() {
        let mut l = tiny_learner();
        seed(&mut l);
        l.submit(ex(3, "bob", Label::Negative, 0)).unwrap();
        let pooled = l.view_examples(View::Pooled, None);
        assert_eq!(pooled.conflicts, vec![3]);
        assert!(pooled.examples.iter().all(|e| e.id != 3));
        assert_eq!(l.disagreements().len(), 1);
        let report = l.overlap_agreement(None).unwrap();
        assert_eq!(report.pairable_units, 5);
        assert_eq!(report.unanimous_units, 4);
    }

    #[test]
    fn disagreements_put_confident_conflicts_first() {
        let mut l = tiny_learner();
        let mut e = |post, who: &str, label, c| {
            let mut x = ex(post, who, label, 0);
            x.certainty = Some(c);
            l.submit(x).unwrap();
        };
        e(1, "alice", Label::Positive, 1);
        e(1, "bob", Label::Negative, 2);
        e(2, "alice", Label::Positive, 5);
        e(2, "bob", Label::Negative, 5);
        let d = l.disagreements();
        assert_eq!(d[0].post_id, 2);
        assert!(d[0].both_confident);
        assert!(!d[1].both_confident);
    }

    #[test]
    fn journal_replay_matches_state() {
        let mut l = tiny_learner();
        seed(&mut l);
        l.submit(ex(3, "alice", Label::Negative, 0)).unwrap();
        assert_eq!(label_state_hash(&replay_journal(l.journal())), l.state_hash());
    }
}
