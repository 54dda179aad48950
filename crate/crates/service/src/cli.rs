//! Command-line front end. Commands work on a project directory directly;
//! `serve` exposes a directory of projects over HTTP.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use parking_lot::Mutex;
use perfsieve::agreement::{self, RatingMatrix};
use perfsieve::corpus::{filter_by_tags, parse_dump, Corpus, DumpFormat, HtmlOptions, TagFilter};
use perfsieve::evaluation::{PostSet, QuadrantMode, View};
use perfsieve::features::FeatureConfig;
use perfsieve::self_training::{self, SelfTrainConfig};
use perfsieve::store::ProjectDir;
use serde_json::json;

use crate::error::{AppError, AppResult};
use crate::jobs::{run_job, JobKind, JobSpec};
use crate::project::{guess_format, AgreementScope, CreateProject, Project};

#[derive(Debug, Parser)]
#[command(name = "perfsieve", version, about = "Active-learning workbench for classifying Q&A posts")]
pub struct Cli {
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dump into a project, creating the project if needed.
    Ingest(IngestArgs),
    /// Filter a dump by tags and write the kept posts as a corpus file.
    Filter(FilterArgs),
    /// Show the open iteration's assignments.
    Iterate(IterateArgs),
    /// Import labels from CSV (post_id,annotator,label[,certainty,rationale,iteration,criteria_version]).
    LabelImport(LabelImportArgs),
    /// Close the open iteration, retrain and select the next batch.
    Advance(ProjectArg),
    /// Cross-validate every view on the current labels.
    Evaluate(EvaluateArgs),
    /// Run self-training and print the baseline-plus-delta table.
    Selftrain(SelftrainArgs),
    /// Krippendorff's alpha for a ratings CSV, the project overlap, or a design.
    Agreement(AgreementArgs),
    /// Write learning curves, distances, labels or the journal.
    Export(ExportArgs),
    /// Serve the HTTP API for every project under a data directory.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ProjectArg {
    /// Project directory.
    #[arg(short, long)]
    pub project: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Xml,
    Jsonl,
}

impl From<FormatArg> for DumpFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Xml => DumpFormat::DumpXml,
            FormatArg::Jsonl => DumpFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    /// Posts.xml dump or simplified JSONL.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Defaults to jsonl for .jsonl/.json files, xml otherwise.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Tag filter `required:any1,any2,...`, e.g. `performance:apache,nginx,rails`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Drop the text of code blocks.
    #[arg(long)]
    pub drop_code: bool,
    /// Project name (new projects only).
    #[arg(long)]
    pub name: Option<String>,
    /// The two annotator ids, comma-separated (new projects only).
    #[arg(long, value_delimiter = ',', default_values = ["A", "B"])]
    pub annotators: Vec<String>,
    #[arg(long, default_value_t = perfsieve::active_loop::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// Largest n-gram length.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Minimum document frequency of an n-gram.
    #[arg(long)]
    pub min_df: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub filter: String,
    #[arg(long)]
    pub drop_code: bool,
    /// Corpus file to write; counts only when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    /// Only this annotator's posts.
    #[arg(long)]
    pub annotator: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct LabelImportArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    /// Also write the learning curve CSV here.
    #[arg(long)]
    pub learning_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftrainArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub f_pos: f64,
    #[arg(long, default_value_t = 0.5)]
    pub f_neg: f64,
    /// Run the standard grid (+5% pos., +50% neg., both) against one baseline.
    #[arg(long)]
    pub grid: bool,
    /// Training view: A, B or A+B (default: the batch-selection view).
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Ratings CSV `unit_id,rater_id,label`.
    #[arg(long, conflicts_with_all = ["project", "design"])]
    pub ratings: Option<PathBuf>,
    /// Project whose overlap (or design) ratings to use.
    #[arg(short, long)]
    pub project: Option<PathBuf>,
    /// Use the project's rating design instead of the overlap posts.
    #[arg(long, requires = "project")]
    pub design_scope: bool,
    #[arg(long)]
    pub iteration: Option<usize>,
    /// Print a pairwise design for this many raters instead.
    #[arg(long, conflicts_with = "project")]
    pub design: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub units_per_pair: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportWhat {
    LearningCurve,
    Distances,
    Labels,
    Journal,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(short, long)]
    pub project: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    /// Distances: labeled or unlabeled (both when omitted).
    #[arg(long)]
    pub set: Option<String>,
    /// Distances: A, B or A+B.
    #[arg(long)]
    pub view: Option<String>,
    /// Distances: score labeled posts out of fold.
    #[arg(long)]
    pub out_of_fold: bool,
    /// Distances: JSON summary instead of CSV points.
    #[arg(long)]
    pub json: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding one subdirectory per project.
    #[arg(long, default_value = "projects")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

fn user(message: impl Into<String>) -> AppError {
    AppError::unprocessable(message)
}

fn open(path: &Path) -> AppResult<Mutex<Project>> {
    let dir = ProjectDir::new(path);
    if !dir.exists() {
        return Err(AppError::not_found(format!("{} does not contain a project", path.display())));
    }
    Ok(Mutex::new(Project::open(dir)?))
}

fn open_input(path: &Path) -> AppResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| user(format!("cannot open {}: {e}", path.display())))
}

fn parse_view(s: Option<&str>) -> AppResult<Option<View>> {
    s.map(|v| v.parse().map_err(user)).transpose()
}

fn write_output(output: Option<&Path>, text: &str, out: &mut dyn Write) -> AppResult<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| user(format!("cannot write {}: {e}", path.display()))),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn print_json(out: &mut dyn Write, value: &serde_json::Value) -> AppResult<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json"))?;
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> AppResult<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Filter(a) => filter(a, out),
        Command::Iterate(a) => {
            let p = open(&a.project)?;
            let p = p.lock();
            let k = p.learner()?.current_iteration().index;
            let batch = p.batch(k, a.annotator.as_deref())?;
            if a.json {
                return print_json(out, &json!(batch));
            }
            writeln!(out, "iteration {} ({} labeled, {} remaining)", k, batch.progress.labeled, batch.progress.remaining)?;
            let it = p.learner()?.current_iteration();
            writeln!(out, "position,post_id,annotator,shared")?;
            for (annotator, posts) in &it.assignments {
                if a.annotator.as_ref().is_some_and(|x| x != annotator) {
                    continue;
                }
                let shared = it.shared();
                for (i, post) in posts.iter().enumerate() {
                    writeln!(out, "{},{},{},{}", i + 1, post, annotator, shared.contains(post))?;
                }
            }
            Ok(())
        }
        Command::LabelImport(a) => {
            let p = open(&a.project)?;
            let n = p.lock().import_labels(open_input(&a.input)?)?;
            let progress = p.lock().learner()?.progress();
            writeln!(out, "imported {n} labels; iteration {}: {} labeled, {} remaining", progress.iteration, progress.labeled, progress.remaining)?;
            Ok(())
        }
        Command::Advance(a) => {
            let p = open(&a.project)?;
            let result = run_job(&p, &JobSpec::new(JobKind::Advance))?;
            let r = &result.result;
            writeln!(
                out,
                "closed iteration {}; iteration {} opened with {} posts ({} shared)",
                r["closed_iteration"], r["next_iteration"]["index"],
                r["next_iteration"]["batch"].as_array().map_or(0, Vec::len),
                r["next_iteration"]["shared"]
            )?;
            Ok(())
        }
        Command::Evaluate(a) => {
            let p = open(&a.project)?;
            let result = run_job(&p, &JobSpec::new(JobKind::Evaluate))?;
            writeln!(out, "view,labeled,accuracy,precision,recall,f1")?;
            for v in result.result["views"].as_array().into_iter().flatten() {
                match v.get("metrics") {
                    Some(m) => writeln!(
                        out,
                        "{},{},{:.3},{:.3},{:.3},{:.3}",
                        v["view"].as_str().unwrap_or_default(),
                        v["labeled"],
                        m["accuracy"].as_f64().unwrap_or(f64::NAN),
                        m["precision"].as_f64().unwrap_or(f64::NAN),
                        m["recall"].as_f64().unwrap_or(f64::NAN),
                        m["f1"].as_f64().unwrap_or(f64::NAN)
                    )?,
                    None => writeln!(out, "{},{},skipped: {}", v["view"].as_str().unwrap_or_default(), v["labeled"], v["error"])?,
                }
            }
            if let Some(path) = a.learning_curve {
                let csv = p.lock().learning_curve_csv(None)?;
                write_output(Some(&path), &csv, out)?;
            }
            Ok(())
        }
        Command::Selftrain(a) => selftrain(a, out),
        Command::Agreement(a) => agreement_cmd(a, out),
        Command::Export(a) => export(a, out),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> AppResult<()> {
    let dir = ProjectDir::new(&a.project);
    let project = if dir.exists() {
        Project::open(dir)?
    } else {
        let id = a
            .project
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| user("project path needs a final directory name"))?
            .to_string();
        if a.annotators.len() != 2 {
            return Err(user(format!("expected two annotators, got {}", a.annotators.len())));
        }
        let mut features = FeatureConfig::default();
        if let Some(n) = a.n_max {
            features.n_max = n;
        }
        if let Some(n) = a.min_df {
            features.min_df = n;
        }
        let mut req = CreateProject::new(a.name.clone().unwrap_or_else(|| id.clone()), &a.annotators[0], &a.annotators[1]);
        req.batch_size = Some(a.batch_size);
        req.features = Some(features);
        let (project, tokens) = Project::create(dir, &id, &req)?;
        for (annotator, token) in tokens {
            writeln!(out, "token for {annotator}: {token}")?;
        }
        project
    };
    let mut project = project;
    let format = a.format.map(DumpFormat::from).unwrap_or_else(|| guess_format(&a.input));
    let filter = a.filter.as_deref().map(TagFilter::parse).transpose()?;
    let html = HtmlOptions { keep_code: !a.drop_code };
    let report = project.ingest(open_input(&a.input)?, format, filter, html, &a.input.display().to_string())?;
    writeln!(
        out,
        "parsed {} posts, kept {} ({} questions, {} answers); vocabulary {} n-grams; {} malformed rows",
        report.parsed, report.kept.total, report.kept.questions, report.kept.answers, report.vocabulary, report.row_errors
    )?;
    Ok(())
}

fn filter(a: FilterArgs, out: &mut dyn Write) -> AppResult<()> {
    let format = a.format.map(DumpFormat::from).unwrap_or_else(|| guess_format(&a.input));
    let tag_filter = TagFilter::parse(&a.filter)?;
    let parsed = parse_dump(open_input(&a.input)?, format, HtmlOptions { keep_code: !a.drop_code })?;
    let kept = filter_by_tags(&parsed.posts, &tag_filter);
    writeln!(out, "kept {} of {} posts", kept.len(), parsed.posts.len())?;
    if let Some(path) = a.output {
        let corpus = Corpus::new(kept, Some(tag_filter), a.input.display().to_string())?;
        corpus.persist(&path)?;
    }
    Ok(())
}

fn selftrain(a: SelftrainArgs, out: &mut dyn Write) -> AppResult<()> {
    let p = open(&a.project)?;
    let view = parse_view(a.view.as_deref())?;
    if !a.grid {
        let config = SelfTrainConfig { f_pos: a.f_pos, f_neg: a.f_neg, seed: a.seed };
        let spec = JobSpec { kind: JobKind::SelfTrain, view, self_train: Some(config) };
        let result = run_job(&p, &spec)?;
        writeln!(out, "{}", result.result["table"].as_str().unwrap_or_default())?;
        return Ok(());
    }
    let p = p.lock();
    let learner = p.learner()?;
    let view = view.unwrap_or(learner.config().batch_view);
    let data = learner.view_examples(view, None);
    let pool = learner.unlabeled_pool();
    let configs = [
        SelfTrainConfig { f_pos: a.f_pos, f_neg: 0.0, seed: a.seed },
        SelfTrainConfig { f_pos: 0.0, f_neg: a.f_neg, seed: a.seed },
        SelfTrainConfig { f_pos: a.f_pos, f_neg: a.f_neg, seed: a.seed },
    ];
    let train = learner.config().train.with_seed(learner.config().train.seed ^ a.seed);
    let mut table = self_training::run_self_training_grid(&data.examples, &pool, &configs, &learner.config().cv, &train)?;
    table.baseline_iteration = learner.iterations().iter().rev().find(|it| it.is_closed()).map(|it| it.index);
    writeln!(out, "{}", table.render_text())?;
    Ok(())
}

fn agreement_cmd(a: AgreementArgs, out: &mut dyn Write) -> AppResult<()> {
    if let Some(n) = a.design {
        let units = agreement::pairwise_design(&agreement::numbered_raters(n), a.units_per_pair)?;
        writeln!(out, "unit_index,rater_a,rater_b")?;
        for u in units {
            writeln!(out, "{},{},{}", u.unit_index, u.rater_a, u.rater_b)?;
        }
        return Ok(());
    }
    let report = if let Some(path) = &a.ratings {
        let matrix = RatingMatrix::read_csv(open_input(path)?)?;
        json!(agreement::krippendorff_alpha::<f64>(&matrix)?)
    } else if let Some(project) = &a.project {
        let p = open(project)?;
        let scope = if a.design_scope { AgreementScope::Design } else { AgreementScope::Overlap };
        let view = p.lock().agreement(scope, a.iteration)?;
        json!(view.report)
    } else {
        return Err(user("give --ratings, --project or --design"));
    };
    if a.json {
        return print_json(out, &report);
    }
    let alpha = report["alpha"].as_f64().map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"));
    writeln!(
        out,
        "alpha {alpha}; percent agreement {:.3} ({}/{} pairable units)",
        report["percent_agreement"].as_f64().unwrap_or(f64::NAN),
        report["unanimous_units"],
        report["pairable_units"]
    )?;
    Ok(())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> AppResult<()> {
    let p = open(&a.project)?;
    let p = p.lock();
    let text = match a.what {
        ExportWhat::LearningCurve => p.learning_curve_csv(None)?,
        ExportWhat::Distances => {
            let set = a.set.as_deref().map(|s| s.parse::<PostSet>().map_err(user)).transpose()?;
            let mode = if a.out_of_fold { QuadrantMode::OutOfFold } else { QuadrantMode::Resubstitution };
            let (view, dist) = p.distances(parse_view(a.view.as_deref())?, mode)?;
            if a.json {
                let summary = match set {
                    Some(s) => json!(dist.set_summary(s)),
                    None => json!(dist.summary),
                };
                serde_json::to_string_pretty(&json!({ "view": view, "summary": summary })).expect("json") + "\n"
            } else {
                let mut buf = Vec::new();
                dist.write_csv(set, &mut buf)?;
                String::from_utf8(buf).expect("csv is utf-8")
            }
        }
        ExportWhat::Labels => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["post_id", "annotator", "label", "certainty", "rationale", "iteration", "criteria_version"])
                .map_err(|e| AppError::internal(e.to_string()))?;
            for e in p.learner()?.labels().values() {
                w.write_record([
                    e.post_id.to_string(),
                    e.annotator_id.clone(),
                    e.label.to_string(),
                    e.certainty.map(|c| c.to_string()).unwrap_or_default(),
                    e.rationale.clone().unwrap_or_default(),
                    e.iteration.to_string(),
                    e.criteria_version.to_string(),
                ])
                .map_err(|e| AppError::internal(e.to_string()))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| AppError::internal(e.to_string()))?).expect("csv is utf-8")
        }
        ExportWhat::Journal => {
            let mut s = String::new();
            for e in p.learner()?.journal() {
                s.push_str(&serde_json::to_string(e).expect("json"));
                s.push('\n');
            }
            s
        }
    };
    write_output(a.output.as_deref(), &text, out)
}

fn serve(a: ServeArgs) -> AppResult<()> {
    std::fs::create_dir_all(&a.data_dir)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| user(format!("cannot listen on {}: {e}", a.addr)))?;
        log::info!("serving {} on {}", a.data_dir.display(), a.addr);
        let app = crate::api::router(crate::api::AppState::new(a.data_dir));
        axum::serve(listener, app).await.map_err(AppError::from)
    })
}
