//! Project directory layout:
//!
//! ```text
//! project.json        metadata and loop configuration
//! corpus.jsonl        filtered corpus
//! vocabulary.jsonl    n-gram vocabulary
//! criteria.jsonl      every criteria version, one per line
//! iterations.json     batches, assignments and per-iteration artifacts
//! journal.jsonl       append-only label events
//! models/<view>.json  latest model per view
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active_loop::{ActiveLearner, AnnotationCriteria, CriteriaLog, Iteration, LabelEvent, LoopConfig, LoopError, PostPool};
use crate::corpus::{Corpus, CorpusError};
use crate::evaluation::View;
use crate::features::{FeatureConfig, FeatureError, Vocabulary};
use crate::svm::{LinearModel, ModelFile, SvmError, VocabularyRef};

pub const PROJECT_SCHEMA_VERSION: u32 = 1;

const PROJECT_FILE: &str = "project.json";
const CORPUS_FILE: &str = "corpus.jsonl";
const VOCABULARY_FILE: &str = "vocabulary.jsonl";
const CRITERIA_FILE: &str = "criteria.jsonl";
const ITERATIONS_FILE: &str = "iterations.json";
const JOURNAL_FILE: &str = "journal.jsonl";
const MODELS_DIR: &str = "models";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {path} (line {line}): {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{0} does not contain a project")]
    NotAProject(PathBuf),
    #[error("project schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("project has no corpus yet")]
    NoCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Model(#[from] SvmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    pub created_at: String,
    pub features: FeatureConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
}

impl ProjectMeta {
    pub fn new(id: impl Into<String>, name: impl Into<String>, features: FeatureConfig, loop_config: LoopConfig) -> Self {
        Self {
            schema_version: PROJECT_SCHEMA_VERSION,
            id: id.into(),
            name: name.into(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            features,
            loop_config,
        }
    }
}

/// A loaded project with a corpus.
pub struct LoadedProject {
    pub meta: ProjectMeta,
    pub corpus: Arc<Corpus>,
    pub vocabulary: Arc<Vocabulary>,
    pub learner: ActiveLearner,
}

#[derive(Debug, Clone)]
pub struct ProjectDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn view_file(view: View) -> &'static str {
    match view {
        View::A => "A.json",
        View::B => "B.json",
        View::Pooled => "pooled.json",
    }
}

impl ProjectDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self) -> bool {
        self.path(PROJECT_FILE).is_file()
    }

    pub fn has_corpus(&self) -> bool {
        self.path(CORPUS_FILE).is_file() && self.path(VOCABULARY_FILE).is_file()
    }

    /// Writes `contents` to a sibling temp file and renames it into place.
    fn write_atomic(&self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<(), StoreError>) -> Result<(), StoreError> {
        let target = self.path(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let tmp = target.with_extension("tmp");
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut out = BufWriter::new(file);
            write(&mut out)?;
            let file = out.into_inner().map_err(|e| StoreError::Io { path: tmp.clone(), source: e.into_error() })?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &target).map_err(io_err(&target))
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<(), StoreError> {
        let path = self.path(name);
        self.write_atomic(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)
                .map_err(|e| StoreError::Format { path: path.clone(), line: 0, message: e.to_string() })?;
            out.write_all(b"\n").map_err(io_err(&path))
        })
    }

    pub fn read_json<D: DeserializeOwned>(&self, name: &str) -> Result<D, StoreError> {
        let path = self.path(name);
        let file = File::open(&path).map_err(io_err(&path))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| StoreError::Format { line: e.line(), message: e.to_string(), path })
    }

    pub fn write_meta(&self, meta: &ProjectMeta) -> Result<(), StoreError> {
        self.write_json(PROJECT_FILE, meta)
    }

    pub fn read_meta(&self) -> Result<ProjectMeta, StoreError> {
        if !self.exists() {
            return Err(StoreError::NotAProject(self.root.clone()));
        }
        let meta: ProjectMeta = self.read_json(PROJECT_FILE)?;
        if meta.schema_version != PROJECT_SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion { found: meta.schema_version, expected: PROJECT_SCHEMA_VERSION });
        }
        Ok(meta)
    }

    pub fn write_corpus(&self, corpus: &Corpus, vocabulary: &Vocabulary) -> Result<(), StoreError> {
        self.write_atomic(CORPUS_FILE, |out| Ok(corpus.write_to(out)?))?;
        self.write_atomic(VOCABULARY_FILE, |out| Ok(vocabulary.write_to(out)?))
    }

    pub fn read_corpus(&self) -> Result<(Corpus, Vocabulary), StoreError> {
        if !self.has_corpus() {
            return Err(StoreError::NoCorpus);
        }
        let corpus = Corpus::load(&self.path(CORPUS_FILE))?;
        let vocabulary = Vocabulary::load(&self.path(VOCABULARY_FILE))?;
        Ok((corpus, vocabulary))
    }

    /// Appends events and syncs the journal to disk.
    pub fn append_journal(&self, events: &[LabelEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.path(JOURNAL_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).expect("label events serialize");
            buf.push(b'\n');
        }
        let mut out = &file;
        out.write_all(&buf).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    pub fn write_jsonl<S: Serialize>(&self, name: &str, items: &[S]) -> Result<(), StoreError> {
        let path = self.path(name);
        self.write_atomic(name, |out| {
            for item in items {
                serde_json::to_writer(&mut *out, item)
                    .map_err(|e| StoreError::Format { path: path.clone(), line: 0, message: e.to_string() })?;
                out.write_all(b"\n").map_err(io_err(&path))?;
            }
            Ok(())
        })
    }

    pub fn read_jsonl<D: DeserializeOwned>(&self, name: &str) -> Result<Vec<D>, StoreError> {
        let path = self.path(name);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut items = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line).map_err(|e| StoreError::Format {
                path: path.clone(),
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Ok(items)
    }

    /// Rewrites the whole journal (used when the in-memory journal is authoritative).
    pub fn write_journal(&self, events: &[LabelEvent]) -> Result<(), StoreError> {
        self.write_jsonl(JOURNAL_FILE, events)
    }

    pub fn read_journal(&self) -> Result<Vec<LabelEvent>, StoreError> {
        self.read_jsonl(JOURNAL_FILE)
    }

    /// Writes criteria, iterations and models. The journal is written separately.
    pub fn write_loop_state(&self, learner: &ActiveLearner, vocabulary: &Vocabulary) -> Result<(), StoreError> {
        self.write_jsonl(CRITERIA_FILE, learner.criteria().versions())?;
        self.write_json(ITERATIONS_FILE, &learner.iterations())?;
        let vocab_ref = VocabularyRef { path: format!("../{VOCABULARY_FILE}"), sha256: vocabulary.content_hash() };
        for view in View::ALL {
            let name = format!("{MODELS_DIR}/{}", view_file(view));
            match learner.models().get(&view) {
                Some(model) => self.write_json(&name, &model.to_file(Some(vocab_ref.clone())))?,
                None => {
                    let path = self.path(&name);
                    if path.exists() {
                        fs::remove_file(&path).map_err(io_err(&path))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Full snapshot: metadata, loop state and a rewritten journal.
    pub fn save(&self, meta: &ProjectMeta, learner: &ActiveLearner, vocabulary: &Vocabulary) -> Result<(), StoreError> {
        self.write_meta(meta)?;
        self.write_loop_state(learner, vocabulary)?;
        self.write_journal(learner.journal())
    }

    pub fn read_model(&self, view: View) -> Result<Option<LinearModel<f64>>, StoreError> {
        let name = format!("{MODELS_DIR}/{}", view_file(view));
        if !self.path(&name).exists() {
            return Ok(None);
        }
        let file: ModelFile<f64> = self.read_json(&name)?;
        Ok(Some(LinearModel::from_file(file)?))
    }

    /// Loads everything and replays the journal into a learner.
    pub fn load(&self) -> Result<LoadedProject, StoreError> {
        let meta = self.read_meta()?;
        let (corpus, vocabulary) = self.read_corpus()?;
        let pool = Arc::new(PostPool::from_corpus(&corpus, &vocabulary));
        let learner = self.load_learner(&meta, pool)?;
        Ok(LoadedProject { meta, corpus: Arc::new(corpus), vocabulary: Arc::new(vocabulary), learner })
    }

    pub fn load_learner(&self, meta: &ProjectMeta, pool: Arc<PostPool>) -> Result<ActiveLearner, StoreError> {
        if !self.path(ITERATIONS_FILE).exists() {
            let mut learner = ActiveLearner::new(meta.loop_config.clone(), pool)?;
            for event in self.read_journal()? {
                learner.submit(event.example)?;
            }
            return Ok(learner);
        }
        let criteria: Vec<AnnotationCriteria> = self.read_jsonl(CRITERIA_FILE)?;
        let iterations: Vec<Iteration> = self.read_json(ITERATIONS_FILE)?;
        let journal = self.read_journal()?;
        let mut models = BTreeMap::new();
        for view in View::ALL {
            if let Some(m) = self.read_model(view)? {
                models.insert(view, m);
            }
        }
        Ok(ActiveLearner::restore(
            meta.loop_config.clone(),
            pool,
            CriteriaLog::from_versions(criteria)?,
            iterations,
            journal,
            models,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Post, PostKind};
    use crate::label::Label;
    use crate::active_loop::LabeledExample;

    fn post(id: u64, body: &str) -> Post {
        Post {
            id,
            kind: PostKind::Question,
            parent_id: None,
            title: None,
            body_html: body.into(),
            body_text: body.into(),
            tags: Default::default(),
            created_at: None,
        }
    }

    #[test]
    fn round_trip_project() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProjectDir::new(dir.path());
        let corpus = Corpus::new(vec![post(1, "mysql slow query"), post(2, "mysql fast cache")], None, "test").unwrap();
        let features = FeatureConfig::default();
        let vocab = Vocabulary::build(corpus.posts().iter().map(|p| p.body_text.as_str()), &features).unwrap();
        let meta = ProjectMeta::new("p1", "demo", features, LoopConfig::new("a", "b"));
        store.write_meta(&meta).unwrap();
        store.write_corpus(&corpus, &vocab).unwrap();

        let pool = Arc::new(PostPool::from_corpus(&corpus, &vocab));
        let mut learner = ActiveLearner::new(meta.loop_config.clone(), pool).unwrap();
        let event = learner
            .submit(LabeledExample {
                post_id: 1,
                label: Label::Positive,
                annotator_id: "a".into(),
                iteration: 0,
                certainty: Some(4),
                rationale: Some("db".into()),
                criteria_version: 1,
            })
            .unwrap();
        store.append_journal(&[event]).unwrap();
        store.write_loop_state(&learner, &vocab).unwrap();

        let loaded = store.load().unwrap();
        assert_eq!(loaded.meta, meta);
        assert_eq!(loaded.corpus.len(), 2);
        assert_eq!(loaded.learner.state_hash(), learner.state_hash());
        assert_eq!(loaded.learner.journal(), learner.journal());
        assert_eq!(loaded.learner.iterations(), learner.iterations());
    }

    #[test]
    fn missing_project_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ProjectDir::new(dir.path()).read_meta(), Err(StoreError::NotAProject(_))));
    }
}
