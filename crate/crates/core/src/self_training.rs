//! Self-training: adopt the most confidently classified unlabeled posts with
//! their predicted labels and measure the effect under cross-validation.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{cross_validate_augmented, CvConfig, CvOutcome, EvalError, MetricsReport};
use crate::features::SparseVector;
use crate::fraction_of;
use crate::label::{Example, Label};
use crate::scalar::Real;
use crate::svm::{self, LinearModel, SvmError, TrainConfig};

pub const PROVENANCE: &str = "self-training";

/// Shown with every report: a given setting may just as well hurt.
pub const CAVEAT: &str = "Most self-training settings yield similar or worse results; \
treat an improvement as evidence that one setting can help, not that self-training helps in general.";

/// Fractions are taken of each predicted side of the pool, not of the whole pool.
pub const FRACTION_BASIS: &str = "predicted-side";

#[derive(Debug, Error, PartialEq)]
pub enum SelfTrainError {
    #[error("invalid self-training config: {0}")]
    InvalidConfig(String),
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error("post {0} is both labeled and in the unlabeled pool")]
    PoolOverlapsLabeled(u64),
    #[error("pseudo-example {0} appeared in an evaluation fold")]
    Leakage(u64),
    #[error(transparent)]
    Train(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    /// Fraction of the predicted-positive pool to adopt.
    pub f_pos: f64,
    /// Fraction of the predicted-negative pool to adopt.
    pub f_neg: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SelfTrainConfig {
    pub fn new(f_pos: f64, f_neg: f64) -> Result<Self, SelfTrainError> {
        let c = Self { f_pos, f_neg, seed: 0 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SelfTrainError> {
        for (name, f) in [("f_pos", self.f_pos), ("f_neg", self.f_neg)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SelfTrainError::InvalidConfig(format!("{name} must be in [0, 1], got {f}")));
            }
        }
        if self.f_pos == 0.0 && self.f_neg == 0.0 {
            return Err(SelfTrainError::InvalidConfig("f_pos and f_neg cannot both be zero".into()));
        }
        Ok(())
    }

    /// Row label such as `+5% pos., +50% neg.`.
    pub fn describe(&self) -> String {
        let pct = |f: f64| {
            let p = f * 100.0;
            if (p - p.round()).abs() < 1e-9 { format!("{}%", p.round()) } else { format!("{p}%") }
        };
        let mut parts = Vec::new();
        if self.f_pos > 0.0 {
            parts.push(format!("+{} pos.", pct(self.f_pos)));
        }
        if self.f_neg > 0.0 {
            parts.push(format!("+{} neg.", pct(self.f_neg)));
        }
        parts.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PseudoExample<T> {
    pub post_id: u64,
    pub pseudo_label: Label,
    pub distance_at_selection: T,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConfidentSelection<T> {
    pub pseudo: Vec<PseudoExample<T>>,
    /// Smallest distance among adopted positives.
    pub pos_cut: Option<T>,
    /// Smallest |distance| among adopted negatives.
    pub neg_cut: Option<T>,
    pub predicted_positive: usize,
    pub predicted_negative: usize,
}

impl<T> ConfidentSelection<T> {
    pub fn count(&self, label: Label) -> usize {
        self.pseudo.iter().filter(|p| p.pseudo_label == label).count()
    }
}

/// Takes the `floor(f_pos * |P|)` farthest predicted positives and the
/// `floor(f_neg * |N|)` farthest predicted negatives. Ties go to the lower id.
pub fn select_confident<T: Real>(
    model: &LinearModel<T>,
    pool: &[(u64, &SparseVector<T>)],
    config: &SelfTrainConfig,
) -> Result<ConfidentSelection<T>, SelfTrainError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(SelfTrainError::EmptyPool);
    }
    let mut pos: Vec<(u64, T)> = Vec::new();
    let mut neg: Vec<(u64, T)> = Vec::new();
    for &(id, x) in pool {
        let d = model.score(x).distance;
        if d > T::zero() {
            pos.push((id, d));
        } else {
            neg.push((id, d));
        }
    }
    let by = |a: T, b: T| a.as_f64().total_cmp(&b.as_f64());
    pos.sort_by(|a, b| by(b.1, a.1).then(a.0.cmp(&b.0)));
    neg.sort_by(|a, b| by(a.1, b.1).then(a.0.cmp(&b.0)));

    let take_pos = fraction_of(config.f_pos, pos.len());
    let take_neg = fraction_of(config.f_neg, neg.len());
    let pseudo_of = |&(id, d): &(u64, T), label| PseudoExample {
        post_id: id,
        pseudo_label: label,
        distance_at_selection: d,
        provenance: PROVENANCE.to_string(),
    };
    let pseudo: Vec<PseudoExample<T>> = pos[..take_pos]
        .iter()
        .map(|p| pseudo_of(p, Label::Positive))
        .chain(neg[..take_neg].iter().map(|n| pseudo_of(n, Label::Negative)))
        .collect();
    Ok(ConfidentSelection {
        pos_cut: pos[..take_pos].last().map(|p| p.1.abs()),
        neg_cut: neg[..take_neg].last().map(|n| n.1.abs()),
        predicted_positive: pos.len(),
        predicted_negative: neg.len(),
        pseudo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricRow {
    pub fn from_report<T: Real>(r: &MetricsReport<T>) -> Self {
        Self {
            accuracy: r.accuracy.as_f64(),
            precision: r.precision.as_f64(),
            recall: r.recall.as_f64(),
            f1: r.f1.as_f64(),
        }
    }

    pub fn minus(&self, base: &MetricRow) -> MetricRow {
        MetricRow {
            accuracy: self.accuracy - base.accuracy,
            precision: self.precision - base.precision,
            recall: self.recall - base.recall,
            f1: self.f1 - base.f1,
        }
    }

    /// Values rounded to three decimals.
    pub fn rounded(&self) -> MetricRow {
        let r = |v: f64| (v * 1000.0).round() / 1000.0;
        MetricRow { accuracy: r(self.accuracy), precision: r(self.precision), recall: r(self.recall), f1: r(self.f1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub config: SelfTrainConfig,
    pub fraction_basis: String,
    pub adopted_positive: usize,
    pub adopted_negative: usize,
    pub predicted_positive: usize,
    pub predicted_negative: usize,
    pub pos_cut: Option<f64>,
    pub neg_cut: Option<f64>,
    pub baseline: MetricRow,
    pub augmented: MetricRow,
    /// `augmented - baseline`, rounded to three decimals.
    pub delta: MetricRow,
    pub caveat: String,
}

/// Full result of one self-training run, including the per-fold details of
/// both cross-validations.
#[derive(Debug, Clone)]
pub struct SelfTrainOutcome<T> {
    pub report: SelfTrainReport,
    pub selection: ConfidentSelection<T>,
    pub baseline_cv: CvOutcome<T>,
    pub augmented_cv: CvOutcome<T>,
}

fn check_disjoint<T>(labeled: &[Example<T>], pool: &[(u64, &SparseVector<T>)]) -> Result<(), SelfTrainError> {
    let ids: HashSet<u64> = labeled.iter().map(|e| e.id).collect();
    match pool.iter().find(|(id, _)| ids.contains(id)) {
        Some(&(id, _)) => Err(SelfTrainError::PoolOverlapsLabeled(id)),
        None => Ok(()),
    }
}

fn assert_no_leakage<T>(cv: &CvOutcome<T>, pseudo: &HashSet<u64>) -> Result<(), SelfTrainError> {
    for run in &cv.runs {
        for fold in &run.folds {
            if let Some(id) = fold.eval_ids.iter().find(|id| pseudo.contains(id)) {
                return Err(SelfTrainError::Leakage(*id));
            }
        }
    }
    Ok(())
}

/// One round of self-training. Pseudo-examples are chosen by a model trained on
/// all of `labeled`; both cross-validations use identical folds and seeds, and
/// the augmented one appends every pseudo-example to each training fold.
pub fn run_self_training<T: Real>(
    labeled: &[Example<T>],
    pool: &[(u64, &SparseVector<T>)],
    config: &SelfTrainConfig,
    cv: &CvConfig,
    train: &TrainConfig,
) -> Result<SelfTrainOutcome<T>, SelfTrainError> {
    config.validate()?;
    check_disjoint(labeled, pool)?;
    let baseline_cv = cross_validate_augmented(labeled, &[], cv, train)?;
    augment_against(labeled, pool, config, cv, train, baseline_cv)
}

fn augment_against<T: Real>(
    labeled: &[Example<T>],
    pool: &[(u64, &SparseVector<T>)],
    config: &SelfTrainConfig,
    cv: &CvConfig,
    train: &TrainConfig,
    baseline_cv: CvOutcome<T>,
) -> Result<SelfTrainOutcome<T>, SelfTrainError> {
    let model = svm::train(labeled, train)?;
    let selection = select_confident(&model, pool, config)?;
    let vectors: std::collections::HashMap<u64, &SparseVector<T>> = pool.iter().copied().collect();
    let augmentation: Vec<Example<T>> = selection
        .pseudo
        .iter()
        .map(|p| Example::new(p.post_id, vectors[&p.post_id].clone(), p.pseudo_label))
        .collect();
    let augmented_cv = cross_validate_augmented(labeled, &augmentation, cv, train)?;
    let pseudo_ids: HashSet<u64> = augmentation.iter().map(|e| e.id).collect();
    assert_no_leakage(&augmented_cv, &pseudo_ids)?;

    let baseline = MetricRow::from_report(&baseline_cv.report);
    let augmented = MetricRow::from_report(&augmented_cv.report);
    let report = SelfTrainReport {
        config: *config,
        fraction_basis: FRACTION_BASIS.to_string(),
        adopted_positive: selection.count(Label::Positive),
        adopted_negative: selection.count(Label::Negative),
        predicted_positive: selection.predicted_positive,
        predicted_negative: selection.predicted_negative,
        pos_cut: selection.pos_cut.map(Real::as_f64),
        neg_cut: selection.neg_cut.map(Real::as_f64),
        baseline,
        augmented,
        delta: augmented.minus(&baseline).rounded(),
        caveat: CAVEAT.to_string(),
    };
    Ok(SelfTrainOutcome { report, selection, baseline_cv, augmented_cv })
}

/// Baseline plus one delta row per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainTable {
    pub baseline: MetricRow,
    pub rows: Vec<SelfTrainReport>,
    /// Loop iteration whose labels form the baseline, named in the caption.
    #[serde(default)]
    pub baseline_iteration: Option<usize>,
}

/// Runs several configurations against a single shared baseline.
pub fn run_self_training_grid<T: Real>(
    labeled: &[Example<T>],
    pool: &[(u64, &SparseVector<T>)],
    configs: &[SelfTrainConfig],
    cv: &CvConfig,
    train: &TrainConfig,
) -> Result<SelfTrainTable, SelfTrainError> {
    for c in configs {
        c.validate()?;
    }
    check_disjoint(labeled, pool)?;
    let baseline_cv = cross_validate_augmented(labeled, &[], cv, train)?;
    let baseline = MetricRow::from_report(&baseline_cv.report);
    let rows = configs
        .iter()
        .map(|c| augment_against(labeled, pool, c, cv, train, baseline_cv.clone()).map(|o| o.report))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SelfTrainTable { baseline, rows, baseline_iteration: None })
}

impl SelfTrainTable {
    /// Plain-text table: the baseline row holds absolute values, every other
    /// row holds absolute differences from it, all to three decimals.
    pub fn render_text(&self) -> String {
        let labels: Vec<String> = self.rows.iter().map(|r| r.config.describe()).collect();
        let width = labels.iter().map(String::len).chain([8]).max().unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} | {:>8} | {:>9} | {:>7} | {:>8}",
            "Approach", "Accuracy", "Precision", "Recall", "F1-score"
        );
        let b = self.baseline;
        let _ = writeln!(
            out,
            "{:<width$} | {:>8.3} | {:>9.3} | {:>7.3} | {:>8.3}",
            "Baseline", b.accuracy, b.precision, b.recall, b.f1
        );
        for (label, row) in labels.iter().zip(&self.rows) {
            let d = row.delta;
            let _ = writeln!(
                out,
                "{:<width$} | {:>+8.3} | {:>+9.3} | {:>+7.3} | {:>+8.3}",
                label, d.accuracy, d.precision, d.recall, d.f1
            );
        }
        match self.baseline_iteration {
            Some(k) => {
                let _ = writeln!(out, "Baseline: results at iteration {k}. Other rows: absolute differences from the baseline.");
            }
            None => {
                let _ = writeln!(out, "Baseline row: absolute values. Other rows: absolute differences from the baseline.");
            }
        }
        let _ = writeln!(out, "Fractions are of each predicted side of the unlabeled pool.");
        let _ = write!(out, "Note: {CAVEAT}");
        out
    }
}

impl From<SelfTrainReport> for SelfTrainTable {
    fn from(report: SelfTrainReport) -> Self {
        Self { baseline: report.baseline, rows: vec![report], baseline_iteration: None }
    }
}
