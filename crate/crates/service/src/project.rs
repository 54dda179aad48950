//! Project state and operations shared by the HTTP handlers and the CLI.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Arc;

use perfsieve::active_loop::{
    ActiveLearner, AnnotationCriteria, Disagreement, Iteration, LabelEvent, LabeledExample, LoopConfig,
    OverlapSchedule, PostPool, Progress,
};
use perfsieve::agreement::{self, RatingMatrix};
use perfsieve::corpus::{filter_by_tags, parse_dump, Corpus, CorpusCounts, DumpFormat, HtmlOptions, PostKind, TagFilter};
use perfsieve::evaluation::{CvConfig, DistanceDistribution, QuadrantMode, View};
use perfsieve::features::{FeatureConfig, Vocabulary};
use perfsieve::store::{ProjectDir, ProjectMeta};
use perfsieve::svm::TrainConfig;
use perfsieve::{AgreementReport, Label};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

const ACCESS_FILE: &str = "access.json";
const IDEMPOTENCY_FILE: &str = "idempotency.json";
const DESIGN_FILE: &str = "design.json";
const ARTIFACTS_DIR: &str = "artifacts";

/// Project ids double as directory names.
pub fn validate_id(id: &str) -> AppResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !id.starts_with('-');
    if ok {
        Ok(())
    } else {
        Err(AppError::unprocessable(format!("invalid project id `{id}` (use letters, digits, - and _)")))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CreateProject {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    pub annotators: [String; 2],
    /// Annotator id to bearer token; generated when missing.
    #[serde(default)]
    pub tokens: BTreeMap<String, String>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub overlap: Option<OverlapSchedule>,
    #[serde(default)]
    pub batch_view: Option<View>,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub cv: Option<CvConfig>,
    #[serde(default)]
    pub bin_width: Option<f64>,
}

impl CreateProject {
    pub fn new(name: impl Into<String>, a: impl Into<String>, b: impl Into<String>) -> Self {
        Self { name: name.into(), annotators: [a.into(), b.into()], ..Self::default() }
    }

    fn loop_config(&self) -> LoopConfig {
        let [a, b] = &self.annotators;
        let mut c = LoopConfig::new(a.clone(), b.clone());
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.overlap {
            c.overlap = v;
        }
        if let Some(v) = self.batch_view {
            c.batch_view = v;
        }
        if let Some(v) = self.train {
            c.train = v;
        }
        if let Some(v) = self.cv {
            c.cv = v;
        }
        if let Some(v) = self.bin_width {
            c.bin_width = v;
        }
        c
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Access {
    /// Token to annotator id.
    tokens: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredResponse {
    fingerprint: String,
    body: Value,
}

/// Where a dump comes from and how to read it.
#[derive(Debug, Clone, Deserialize)]
pub struct IngestRequest {
    #[serde(default)]
    pub path: Option<String>,
    /// Dump text uploaded inline.
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub format: Option<DumpFormat>,
    /// `required:any1,any2,...`
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub keep_code: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub parsed: usize,
    pub kept: CorpusCounts,
    pub skipped_types: usize,
    pub orphan_answers: usize,
    pub row_errors: usize,
    pub vocabulary: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: CorpusCounts,
    pub source: String,
    pub filter: Option<TagFilter>,
    pub vocabulary: usize,
    pub labeled_posts: usize,
    pub unlabeled_posts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub post_id: u64,
    pub label: Label,
    #[serde(default)]
    pub certainty: Option<u8>,
    #[serde(default)]
    pub rationale: Option<String>,
    pub criteria_version: u32,
    /// Defaults to the open iteration.
    #[serde(default)]
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelResponse {
    pub event: LabelEvent,
    /// Progress of the submitting annotator in the open iteration.
    pub progress: Progress,
    pub iteration_progress: Progress,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectView {
    pub id: String,
    pub name: String,
    pub created_at: String,
    pub annotators: [String; 2],
    pub features: FeatureConfig,
    pub config: LoopConfig,
    pub has_corpus: bool,
    pub corpus: Option<CorpusCounts>,
    pub current_iteration: Option<usize>,
    pub progress: Option<Progress>,
    pub criteria_version: Option<u32>,
    pub labels: usize,
    pub models: Vec<View>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchPost {
    pub position: usize,
    pub post_id: u64,
    pub kind: PostKind,
    pub title: Option<String>,
    pub body_html: String,
    pub tags: BTreeSet<String>,
    /// Also assigned to the other annotator.
    pub shared: bool,
    pub labels: Vec<LabeledExample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchView {
    pub iteration: usize,
    pub closed: bool,
    pub annotator: Option<String>,
    pub criteria: AnnotationCriteria,
    pub progress: Progress,
    pub posts: Vec<BatchPost>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignUnitPost {
    pub unit_index: usize,
    pub post_id: u64,
    pub rater_a: String,
    pub rater_b: String,
}

/// A pairwise group-rating exercise over corpus posts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Design {
    pub raters: Vec<String>,
    pub units_per_pair: usize,
    pub seed: u64,
    pub units: Vec<DesignUnitPost>,
    #[serde(default)]
    pub ratings: Vec<agreement::Rating>,
}

impl Design {
    pub fn per_rater(&self) -> BTreeMap<String, Vec<u64>> {
        let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for u in &self.units {
            out.entry(u.rater_a.clone()).or_default().push(u.post_id);
            out.entry(u.rater_b.clone()).or_default().push(u.post_id);
        }
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct DesignRequest {
    #[serde(default)]
    pub raters: Option<usize>,
    #[serde(default)]
    pub rater_ids: Option<Vec<String>>,
    #[serde(default = "one")]
    pub units_per_pair: usize,
    #[serde(default)]
    pub seed: u64,
    /// Ratings for the existing design, `unit_id` being the post id.
    #[serde(default)]
    pub ratings: Option<Vec<agreement::Rating>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementScope {
    Overlap,
    Design,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementView {
    pub scope: AgreementScope,
    pub iteration: Option<usize>,
    pub alpha_display: String,
    pub report: AgreementReport,
    /// Overlap posts with differing labels (overlap scope only).
    pub disagreements: Vec<Disagreement>,
}

fn hash_json<S: Serialize>(value: &S) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

pub fn build_vocabulary(corpus: &Corpus, features: &FeatureConfig) -> AppResult<Vocabulary> {
    let docs: Vec<String> = corpus.posts().iter().map(|p| p.document_text(features.include_title)).collect();
    Ok(Vocabulary::build(docs.iter().map(String::as_str), features)?)
}

pub struct Project {
    dir: ProjectDir,
    meta: ProjectMeta,
    access: Access,
    corpus: Option<Arc<Corpus>>,
    vocabulary: Option<Arc<Vocabulary>>,
    learner: Option<ActiveLearner>,
    idempotency: BTreeMap<String, StoredResponse>,
    design: Option<Design>,
}

impl Project {
    /// Creates the project directory. Returns the project and the annotator tokens.
    pub fn create(dir: ProjectDir, id: &str, req: &CreateProject) -> AppResult<(Self, BTreeMap<String, String>)> {
        validate_id(id)?;
        if dir.exists() {
            return Err(AppError::conflict(format!("project `{id}` already exists")));
        }
        let features = req.features.unwrap_or_default();
        features.validate()?;
        let config = req.loop_config();
        config.validate()?;
        if let Some(unknown) = req.tokens.keys().find(|a| !config.annotators.contains(a)) {
            return Err(AppError::unprocessable(format!("token given for unknown annotator `{unknown}`")));
        }
        let mut tokens = BTreeMap::new();
        for a in &config.annotators {
            let token = req.tokens.get(a).cloned().unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
            if token.is_empty() || tokens.contains_key(&token) {
                return Err(AppError::unprocessable("annotator tokens must be non-empty and distinct"));
            }
            tokens.insert(token, a.clone());
        }
        let meta = ProjectMeta::new(id, req.name.clone(), features, config);
        let access = Access { tokens };
        dir.write_meta(&meta)?;
        dir.write_json(ACCESS_FILE, &access)?;
        let by_annotator = access.tokens.iter().map(|(t, a)| (a.clone(), t.clone())).collect();
        let project = Self {
            dir,
            meta,
            access,
            corpus: None,
            vocabulary: None,
            learner: None,
            idempotency: BTreeMap::new(),
            design: None,
        };
        Ok((project, by_annotator))
    }

    pub fn open(dir: ProjectDir) -> AppResult<Self> {
        let meta = dir.read_meta()?;
        let access = if dir.path(ACCESS_FILE).exists() { dir.read_json(ACCESS_FILE)? } else { Access::default() };
        let idempotency =
            if dir.path(IDEMPOTENCY_FILE).exists() { dir.read_json(IDEMPOTENCY_FILE)? } else { BTreeMap::new() };
        let design = if dir.path(DESIGN_FILE).exists() { Some(dir.read_json(DESIGN_FILE)?) } else { None };
        let (corpus, vocabulary, learner) = if dir.has_corpus() {
            let loaded = dir.load()?;
            (Some(loaded.corpus), Some(loaded.vocabulary), Some(loaded.learner))
        } else {
            (None, None, None)
        };
        Ok(Self { dir, meta, access, corpus, vocabulary, learner, idempotency, design })
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn meta(&self) -> &ProjectMeta {
        &self.meta
    }

    pub fn dir(&self) -> &ProjectDir {
        &self.dir
    }

    pub fn annotator_for_token(&self, token: &str) -> Option<&str> {
        self.access.tokens.get(token).map(String::as_str)
    }

    pub fn learner(&self) -> AppResult<&ActiveLearner> {
        self.learner.as_ref().ok_or_else(|| AppError::conflict("project has no corpus yet"))
    }

    fn learner_mut(&mut self) -> AppResult<&mut ActiveLearner> {
        self.learner.as_mut().ok_or_else(|| AppError::conflict("project has no corpus yet"))
    }

    fn vocabulary(&self) -> AppResult<&Arc<Vocabulary>> {
        self.vocabulary.as_ref().ok_or_else(|| AppError::conflict("project has no corpus yet"))
    }

    pub fn corpus(&self) -> AppResult<&Arc<Corpus>> {
        self.corpus.as_ref().ok_or_else(|| AppError::conflict("project has no corpus yet"))
    }

    pub fn view(&self) -> ProjectView {
        let learner = self.learner.as_ref();
        ProjectView {
            id: self.meta.id.clone(),
            name: self.meta.name.clone(),
            created_at: self.meta.created_at.clone(),
            annotators: self.meta.loop_config.annotators.clone(),
            features: self.meta.features,
            config: self.meta.loop_config.clone(),
            has_corpus: self.corpus.is_some(),
            corpus: self.corpus.as_ref().map(|c| c.counts()),
            current_iteration: learner.map(|l| l.current_iteration().index),
            progress: learner.map(ActiveLearner::progress),
            criteria_version: learner.map(|l| l.criteria().current().version),
            labels: learner.map_or(0, |l| l.labels().len()),
            models: learner.map(|l| l.models().keys().copied().collect()).unwrap_or_default(),
        }
    }

    /// Parses, filters and vectorizes a dump, replacing any previous corpus.
    /// Refused once labels exist.
    pub fn ingest<R: BufRead>(
        &mut self,
        input: R,
        format: DumpFormat,
        filter: Option<TagFilter>,
        html: HtmlOptions,
        source: &str,
    ) -> AppResult<IngestReport> {
        if self.learner.as_ref().is_some_and(|l| !l.journal().is_empty()) {
            return Err(AppError::conflict("labels exist; the corpus can no longer be replaced"));
        }
        let parsed = parse_dump(input, format, html)?;
        let total = parsed.posts.len();
        let posts = match &filter {
            Some(f) => filter_by_tags(&parsed.posts, f),
            None => parsed.posts,
        };
        let corpus = Corpus::new(posts, filter, source)?;
        let vocabulary = build_vocabulary(&corpus, &self.meta.features)?;
        let pool = Arc::new(PostPool::from_corpus(&corpus, &vocabulary));
        let mut learner = ActiveLearner::new(self.meta.loop_config.clone(), pool)?;
        if let Some(old) = &self.learner {
            for c in &old.criteria().versions()[1..] {
                learner.add_criteria(&c.text, &c.changelog)?;
            }
        }
        self.dir.write_corpus(&corpus, &vocabulary)?;
        self.dir.write_loop_state(&learner, &vocabulary)?;
        self.dir.write_journal(&[])?;
        let report = IngestReport {
            parsed: total,
            kept: corpus.counts(),
            skipped_types: parsed.skipped_types,
            orphan_answers: parsed.orphan_answers,
            row_errors: parsed.row_errors.len(),
            vocabulary: vocabulary.len(),
        };
        log::info!("project {}: ingested {} of {} posts", self.meta.id, report.kept.total, total);
        self.corpus = Some(Arc::new(corpus));
        self.vocabulary = Some(Arc::new(vocabulary));
        self.learner = Some(learner);
        self.idempotency.clear();
        self.persist_idempotency()?;
        Ok(report)
    }

    pub fn ingest_request(&mut self, req: &IngestRequest) -> AppResult<IngestReport> {
        let filter = req.filter.as_deref().map(TagFilter::parse).transpose()?;
        let html = HtmlOptions { keep_code: req.keep_code.unwrap_or(true) };
        match (&req.path, &req.content) {
            (Some(path), None) => {
                let format = match req.format {
                    Some(f) => f,
                    None => guess_format(Path::new(path)),
                };
                let file = std::fs::File::open(path)
                    .map_err(|e| AppError::unprocessable(format!("cannot open {path}: {e}")))?;
                self.ingest(std::io::BufReader::new(file), format, filter, html, path)
            }
            (None, Some(content)) => {
                let format = req.format.unwrap_or(DumpFormat::DumpXml);
                self.ingest(content.as_bytes(), format, filter, html, "upload")
            }
            _ => Err(AppError::unprocessable("give exactly one of `path` or `content`")),
        }
    }

    pub fn corpus_stats(&self) -> AppResult<CorpusStats> {
        let corpus = self.corpus()?;
        let learner = self.learner()?;
        let labeled: BTreeSet<u64> = learner.labels().keys().map(|(p, _)| *p).collect();
        Ok(CorpusStats {
            counts: corpus.counts(),
            source: corpus.source().to_string(),
            filter: corpus.filter().cloned(),
            vocabulary: self.vocabulary()?.len(),
            labeled_posts: labeled.len(),
            unlabeled_posts: corpus.len() - labeled.len(),
        })
    }

    pub fn current_iteration(&self) -> AppResult<(Iteration, Progress, u32)> {
        let l = self.learner()?;
        Ok((l.current_iteration().clone(), l.progress(), l.criteria().current().version))
    }

    fn annotator_progress(&self, iteration: &Iteration, annotator: &str) -> Progress {
        let labels = self.learner.as_ref().map(ActiveLearner::labels);
        let posts = iteration.assignments.get(annotator).map_or(&[][..], Vec::as_slice);
        let labeled = posts
            .iter()
            .filter(|p| labels.is_some_and(|l| l.get(&(**p, annotator.to_string())).is_some_and(|e| e.iteration == iteration.index)))
            .count();
        Progress { iteration: iteration.index, labeled, remaining: posts.len() - labeled }
    }

    /// Posts of iteration `k` in assignment order, for one annotator or all.
    pub fn batch(&self, k: usize, annotator: Option<&str>) -> AppResult<BatchView> {
        let learner = self.learner()?;
        let corpus = self.corpus()?;
        let it = learner.iterations().get(k).ok_or_else(|| AppError::not_found(format!("iteration {k} does not exist")))?;
        if let Some(a) = annotator {
            if learner.config().annotator_view(a).is_none() {
                return Err(AppError::forbidden(format!("annotator `{a}` is not on the project roster")));
            }
        }
        let shared: BTreeSet<u64> = it.shared().into_iter().collect();
        let ids: Vec<u64> = match annotator {
            Some(a) => it.assignments.get(a).cloned().unwrap_or_default(),
            None => it.batch.clone(),
        };
        let posts = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let post = corpus.get(id).expect("batch posts come from the corpus");
                let labels = learner
                    .labels()
                    .range((id, String::new())..(id + 1, String::new()))
                    .map(|(_, e)| e)
                    .filter(|e| annotator.is_none_or(|a| e.annotator_id == a))
                    .cloned()
                    .collect();
                BatchPost {
                    position: i + 1,
                    post_id: id,
                    kind: post.kind,
                    title: post.title.clone(),
                    body_html: post.body_html.clone(),
                    tags: post.tags.clone(),
                    shared: shared.contains(&id),
                    labels,
                }
            })
            .collect();
        let progress = match annotator {
            Some(a) => self.annotator_progress(it, a),
            None if k == learner.current_iteration().index => learner.progress(),
            None => Progress { iteration: k, labeled: it.assignments.values().map(Vec::len).sum(), remaining: 0 },
        };
        Ok(BatchView {
            iteration: k,
            closed: it.is_closed(),
            annotator: annotator.map(str::to_string),
            criteria: learner.criteria().current().clone(),
            progress,
            posts,
        })
    }

    /// Records one label. With a key, a replay of the same request returns the
    /// stored response and a different request under the same key is refused.
    pub fn submit_label(&mut self, annotator: &str, sub: &LabelSubmission, key: Option<&str>) -> AppResult<Value> {
        let slot = key.map(|k| format!("{annotator}\u{1f}{k}"));
        let fingerprint = hash_json(sub);
        if let Some(stored) = slot.as_ref().and_then(|s| self.idempotency.get(s)) {
            if stored.fingerprint != fingerprint {
                return Err(AppError::unprocessable("idempotency key was already used for a different request"));
            }
            return Ok(stored.body.clone());
        }
        let learner = self.learner_mut()?;
        let example = LabeledExample {
            post_id: sub.post_id,
            label: sub.label,
            annotator_id: annotator.to_string(),
            iteration: sub.iteration.unwrap_or(learner.current_iteration().index),
            certainty: sub.certainty,
            rationale: sub.rationale.clone(),
            criteria_version: sub.criteria_version,
        };
        let event = learner.submit(example)?;
        if let Err(e) = self.persist_event(&event) {
            log::error!("project {}: persisting label failed, reloading: {e}", self.meta.id);
            self.reload_learner();
            return Err(e);
        }
        let it = self.learner()?.current_iteration().clone();
        let response = LabelResponse {
            event,
            progress: self.annotator_progress(&it, annotator),
            iteration_progress: self.learner()?.progress(),
        };
        let body = serde_json::to_value(&response).expect("response serializes");
        if let Some(slot) = slot {
            self.idempotency.insert(slot, StoredResponse { fingerprint, body: body.clone() });
            self.persist_idempotency()?;
        }
        Ok(body)
    }

    fn persist_event(&self, event: &LabelEvent) -> AppResult<()> {
        self.dir.append_journal(std::slice::from_ref(event))?;
        if event.example.iteration == 0 {
            self.persist_loop_state()?;
        }
        Ok(())
    }

    fn reload_learner(&mut self) {
        if let Some(corpus) = &self.corpus {
            let vocab = self.vocabulary.as_ref().expect("vocabulary accompanies corpus");
            let pool = Arc::new(PostPool::from_corpus(corpus, vocab));
            match self.dir.load_learner(&self.meta, pool) {
                Ok(l) => self.learner = Some(l),
                Err(e) => log::error!("project {}: reload failed: {e}", self.meta.id),
            }
        }
    }

    fn persist_idempotency(&self) -> AppResult<()> {
        Ok(self.dir.write_json(IDEMPOTENCY_FILE, &self.idempotency)?)
    }

    pub fn persist_loop_state(&self) -> AppResult<()> {
        Ok(self.dir.write_loop_state(self.learner()?, self.vocabulary()?)?)
    }

    /// Imports `post_id,annotator,label[,certainty][,rationale][,iteration][,criteria_version]`
    /// rows. Missing criteria versions default to the current one.
    pub fn import_labels<R: std::io::Read>(&mut self, input: R) -> AppResult<usize> {
        #[derive(Deserialize)]
        struct Row {
            post_id: u64,
            annotator: String,
            label: String,
            #[serde(default)]
            certainty: Option<u8>,
            #[serde(default)]
            rationale: Option<String>,
            #[serde(default)]
            iteration: Option<usize>,
            #[serde(default)]
            criteria_version: Option<u32>,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut n = 0;
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| AppError::unprocessable(format!("line {line}: {e}")))?;
            let label: Label = row.label.parse().map_err(|e| AppError::unprocessable(format!("line {line}: {e}")))?;
            let current = self.learner()?.criteria().current().version;
            let sub = LabelSubmission {
                post_id: row.post_id,
                label,
                certainty: row.certainty,
                rationale: row.rationale.filter(|r| !r.is_empty()),
                criteria_version: row.criteria_version.unwrap_or(current),
                iteration: row.iteration,
            };
            self.submit_label(&row.annotator, &sub, None).map_err(|e| AppError {
                message: format!("line {line}: {}", e.message),
                ..e
            })?;
            n += 1;
        }
        Ok(n)
    }

    pub fn criteria(&self) -> AppResult<&[AnnotationCriteria]> {
        Ok(self.learner()?.criteria().versions())
    }

    pub fn add_criteria(&mut self, text: &str, changelog: &str) -> AppResult<AnnotationCriteria> {
        let c = self.learner_mut()?.add_criteria(text, changelog)?.clone();
        self.persist_loop_state()?;
        Ok(c)
    }

    pub fn learning_curve_csv(&self, range: Option<RangeInclusive<usize>>) -> AppResult<String> {
        Ok(self.learner()?.learning_curve(range).to_csv())
    }

    pub fn distances(&self, view: Option<View>, mode: QuadrantMode) -> AppResult<(View, DistanceDistribution)> {
        let learner = self.learner()?;
        let view = view.unwrap_or(learner.config().batch_view);
        Ok((view, learner.distance_distribution(view, mode)?))
    }

    pub fn agreement(&self, scope: AgreementScope, iteration: Option<usize>) -> AppResult<AgreementView> {
        let (matrix, disagreements) = match scope {
            AgreementScope::Overlap => {
                let learner = self.learner()?;
                let mut d = learner.disagreements();
                if let Some(i) = iteration {
                    d.retain(|x| x.iteration == i);
                }
                (learner.overlap_matrix(iteration), d)
            }
            AgreementScope::Design => {
                let design = self.design.as_ref().ok_or_else(|| AppError::conflict("no rating design has been created"))?;
                (RatingMatrix::from_ratings(design.ratings.iter().cloned())?, Vec::new())
            }
        };
        let report = agreement::krippendorff_alpha::<f64>(&matrix)?;
        Ok(AgreementView { scope, iteration, alpha_display: report.alpha_display(), report, disagreements })
    }

    pub fn design(&self) -> Option<&Design> {
        self.design.as_ref()
    }

    /// Creates a pairwise design over randomly drawn unlabeled posts, or records
    /// ratings against the existing design.
    pub fn design_request(&mut self, req: &DesignRequest) -> AppResult<&Design> {
        if let Some(ratings) = &req.ratings {
            return self.record_design_ratings(ratings);
        }
        let raters = match (&req.rater_ids, req.raters) {
            (Some(ids), _) => ids.clone(),
            (None, Some(n)) => agreement::numbered_raters(n),
            (None, None) => return Err(AppError::unprocessable("give `raters` (a count) or `rater_ids`")),
        };
        if req.units_per_pair == 0 {
            return Err(AppError::unprocessable("units_per_pair must be at least 1"));
        }
        let units = agreement::pairwise_design(&raters, req.units_per_pair)?;
        let learner = self.learner()?;
        let mut candidates: Vec<u64> = learner.unlabeled_pool().iter().map(|(id, _)| *id).collect();
        if candidates.len() < units.len() {
            return Err(AppError::unprocessable(format!(
                "design needs {} posts but only {} unlabeled posts remain",
                units.len(),
                candidates.len()
            )));
        }
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(req.seed));
        let units = units
            .into_iter()
            .zip(candidates)
            .map(|(u, post_id)| DesignUnitPost { unit_index: u.unit_index, post_id, rater_a: u.rater_a, rater_b: u.rater_b })
            .collect();
        let design = Design { raters, units_per_pair: req.units_per_pair, seed: req.seed, units, ratings: Vec::new() };
        self.dir.write_json(DESIGN_FILE, &design)?;
        Ok(self.design.insert(design))
    }

    fn record_design_ratings(&mut self, ratings: &[agreement::Rating]) -> AppResult<&Design> {
        let design = self.design.as_mut().ok_or_else(|| AppError::conflict("no rating design has been created"))?;
        let allowed: BTreeSet<(String, &str)> = design
            .units
            .iter()
            .flat_map(|u| [(u.post_id.to_string(), u.rater_a.as_str()), (u.post_id.to_string(), u.rater_b.as_str())])
            .collect();
        for r in ratings {
            if !allowed.contains(&(r.unit_id.clone(), r.rater_id.as_str())) {
                return Err(AppError::unprocessable(format!(
                    "rater `{}` is not assigned to unit {} in the design",
                    r.rater_id, r.unit_id
                )));
            }
        }
        let mut merged: BTreeMap<(String, String), agreement::Rating> =
            design.ratings.drain(..).map(|r| ((r.unit_id.clone(), r.rater_id.clone()), r)).collect();
        for r in ratings {
            merged.insert((r.unit_id.clone(), r.rater_id.clone()), r.clone());
        }
        design.ratings = merged.into_values().collect();
        let snapshot = design.clone();
        self.dir.write_json(DESIGN_FILE, &snapshot)?;
        Ok(self.design.as_ref().expect("design exists"))
    }

    /// A copy of the learner that a job can work on without holding the lock.
    pub fn snapshot(&self) -> AppResult<ActiveLearner> {
        Ok(self.learner()?.clone())
    }

    /// Installs models trained on a snapshot.
    pub fn commit_models(&mut self, models: BTreeMap<View, perfsieve::LinearModel>) -> AppResult<()> {
        self.learner_mut()?.set_models(models);
        self.persist_loop_state()
    }

    /// Replaces the learner with an advanced snapshot, provided no label or
    /// criteria change happened since the snapshot was taken.
    pub fn commit_advance(&mut self, base: &ActiveLearner, advanced: ActiveLearner) -> AppResult<()> {
        let live = self.learner()?;
        if live.journal().len() != base.journal().len()
            || live.criteria().current().version != base.criteria().current().version
            || live.iterations().len() != base.iterations().len()
        {
            return Err(AppError::conflict("labels or criteria changed while advancing; retry the advance"));
        }
        let previous = self.learner.replace(advanced);
        if let Err(e) = self.persist_loop_state() {
            self.learner = previous;
            return Err(e);
        }
        Ok(())
    }

    /// Writes an immutable, content-addressed result file and returns its reference.
    pub fn store_artifact(&self, value: &Value) -> AppResult<String> {
        let digest = hash_json(value);
        let name = format!("{ARTIFACTS_DIR}/{digest}.json");
        if !self.dir.path(&name).exists() {
            self.dir.write_json(&name, value)?;
        }
        Ok(format!("sha256:{digest}"))
    }

    pub fn read_artifact(&self, reference: &str) -> AppResult<Value> {
        let digest = reference.strip_prefix("sha256:").unwrap_or(reference);
        if digest.len() != 64 || !digest.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(AppError::unprocessable(format!("malformed artifact reference `{reference}`")));
        }
        let name = format!("{ARTIFACTS_DIR}/{digest}.json");
        if !self.dir.path(&name).exists() {
            return Err(AppError::not_found(format!("no artifact {reference}")));
        }
        Ok(self.dir.read_json(&name)?)
    }
}

pub fn guess_format(path: &Path) -> DumpFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => DumpFormat::Jsonl,
        _ => DumpFormat::DumpXml,
    }
}
