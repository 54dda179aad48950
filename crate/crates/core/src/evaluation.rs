//! Classification metrics, stratified cross-validation, learning-curve rows and
//! distance-to-hyperplane distributions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Example, Label};
use crate::scalar::Real;
use crate::svm::{self, LinearModel, SvmError, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{label} class has only {count} examples; {folds}-fold cross-validation needs at least {folds} (use fewer folds)")]
    TooFewMembers { label: Label, count: usize, folds: usize },
    #[error("invalid cross-validation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Train(#[from] SvmError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Metrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// No positive predictions; precision reported as 0.
    #[serde(default)]
    pub precision_undefined: bool,
    /// No positive examples; recall reported as 0.
    #[serde(default)]
    pub recall_undefined: bool,
}

/// Accuracy, precision, recall and F1 from confusion counts. Undefined ratios
/// are reported as 0 and flagged. `counts` must not be empty.
pub fn confusion_metrics<T: Real>(counts: &ConfusionCounts) -> Metrics<T> {
    assert!(counts.total() >= 1, "confusion counts are empty");
    let c = |v: u64| T::lit(v as f64);
    let accuracy = c(counts.tp + counts.tn) / c(counts.total());
    let precision_undefined = counts.tp + counts.fp == 0;
    let recall_undefined = counts.tp + counts.fn_ == 0;
    let precision =
        if precision_undefined { T::zero() } else { c(counts.tp) / c(counts.tp + counts.fp) };
    let recall = if recall_undefined { T::zero() } else { c(counts.tp) / c(counts.tp + counts.fn_) };
    let f1 = if precision + recall == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) * precision * recall / (precision + recall)
    };
    Metrics { accuracy, precision, recall, f1, precision_undefined, recall_undefined }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub runs: usize,
    pub base_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, runs: 5, base_seed: 0 }
    }
}

/// Assigns each example to a fold so that every fold holds the floor or ceiling
/// of its class's ideal share.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if folds < 2 {
        return Err(EvalError::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0usize;
    for class in [Label::Positive, Label::Negative] {
        let mut members: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        if members.len() < folds {
            return Err(EvalError::TooFewMembers { label: class, count: members.len(), folds });
        }
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = (offset + k) % folds;
        }
        offset = (offset + members.len()) % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub eval_ids: Vec<u64>,
    /// Human-labeled training examples in this fold.
    pub train_size: usize,
    /// Extra (augmentation) examples appended to the training fold.
    pub augmented: usize,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfFoldPrediction {
    pub id: u64,
    pub actual: Label,
    pub predicted: Label,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRun {
    pub seed: u64,
    pub folds: Vec<FoldDetail>,
    pub counts: ConfusionCounts,
    pub predictions: Vec<OutOfFoldPrediction>,
}

/// Means over runs of micro-averaged (pooled across folds) metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MetricsReport<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub per_run: Vec<Metrics<T>>,
    pub runs: usize,
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// How per-fold results are combined within a run.
    pub aggregation: String,
}

impl<T: Real> MetricsReport<T> {
    fn from_runs(per_run: Vec<Metrics<T>>, folds: usize, seeds: Vec<u64>) -> Self {
        let n = T::from_count(per_run.len());
        let mean = |f: fn(&Metrics<T>) -> T| per_run.iter().map(f).fold(T::zero(), |a, b| a + b) / n;
        Self {
            accuracy: mean(|m| m.accuracy),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            runs: per_run.len(),
            folds,
            seeds,
            aggregation: "micro".into(),
            per_run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CvOutcome<T> {
    pub report: MetricsReport<T>,
    pub runs: Vec<CvRun>,
}

/// Repeated stratified k-fold cross-validation.
pub fn cross_validate<T: Real>(
    examples: &[Example<T>],
    cv: &CvConfig,
    train: &TrainConfig,
) -> Result<MetricsReport<T>, EvalError> {
    Ok(cross_validate_augmented(examples, &[], cv, train)?.report)
}

/// Cross-validation where every training fold is extended with `augmentation`.
/// Evaluation folds contain only members of `examples`.
pub fn cross_validate_augmented<T: Real>(
    examples: &[Example<T>],
    augmentation: &[Example<T>],
    cv: &CvConfig,
    train: &TrainConfig,
) -> Result<CvOutcome<T>, EvalError> {
    if cv.runs == 0 {
        return Err(EvalError::InvalidConfig("runs must be positive".into()));
    }
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    let mut runs = Vec::with_capacity(cv.runs);
    let mut per_run = Vec::with_capacity(cv.runs);
    let mut seeds = Vec::with_capacity(cv.runs);
    for run in 0..cv.runs {
        let seed = cv.base_seed.wrapping_add(run as u64);
        seeds.push(seed);
        let assignment = stratified_folds(&labels, cv.folds, seed)?;
        let mut run_counts = ConfusionCounts::default();
        let mut folds = Vec::with_capacity(cv.folds);
        let mut predictions = Vec::with_capacity(examples.len());
        for fold in 0..cv.folds {
            let training: Vec<&Example<T>> = examples
                .iter()
                .zip(&assignment)
                .filter(|(_, &f)| f != fold)
                .map(|(e, _)| e)
                .chain(augmentation.iter())
                .collect();
            let fold_seed = train.seed.wrapping_add((run * cv.folds + fold) as u64);
            let model = svm::train(training.iter().copied(), &train.with_seed(fold_seed))?;
            let mut counts = ConfusionCounts::default();
            let mut eval_ids = Vec::new();
            for (ex, _) in examples.iter().zip(&assignment).filter(|(_, &f)| f == fold) {
                let score = model.score(&ex.vector);
                counts.record(ex.label, score.label);
                eval_ids.push(ex.id);
                predictions.push(OutOfFoldPrediction {
                    id: ex.id,
                    actual: ex.label,
                    predicted: score.label,
                    distance: score.distance.as_f64(),
                });
            }
            run_counts.merge(&counts);
            folds.push(FoldDetail {
                eval_ids,
                train_size: training.len() - augmentation.len(),
                augmented: augmentation.len(),
                counts,
            });
        }
        per_run.push(confusion_metrics(&run_counts));
        runs.push(CvRun { seed, folds, counts: run_counts, predictions });
    }
    Ok(CvOutcome { report: MetricsReport::from_runs(per_run, cv.folds, seeds), runs })
}

/// Which labels a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    /// Labels of the first annotator only.
    A,
    /// Labels of the second annotator only.
    B,
    /// Both annotators; posts with conflicting labels are excluded.
    Pooled,
}

impl View {
    pub const ALL: [View; 3] = [View::A, View::B, View::Pooled];

    pub fn as_str(self) -> &'static str {
        match self {
            View::A => "A",
            View::B => "B",
            View::Pooled => "A+B",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(View::A),
            "b" => Ok(View::B),
            "a+b" | "ab" | "pooled" => Ok(View::Pooled),
            other => Err(format!("unknown view `{other}` (expected A, B or A+B)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub iteration: usize,
    pub view: View,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LearningCurveRow {
    pub fn from_report<T: Real>(iteration: usize, view: View, report: &MetricsReport<T>) -> Self {
        Self {
            iteration,
            view,
            accuracy: report.accuracy.as_f64(),
            precision: report.precision.as_f64(),
            recall: report.recall.as_f64(),
            f1: report.f1.as_f64(),
        }
    }
}

pub const LEARNING_CURVE_HEADER: &str = "iteration,view,accuracy,precision,recall,f1";

pub fn write_learning_curve_csv<W: Write>(rows: &[LearningCurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LEARNING_CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.iteration, r.view, r.accuracy, r.precision, r.recall, r.f1
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostSet {
    Labeled,
    Unlabeled,
}

impl PostSet {
    pub fn as_str(self) -> &'static str {
        match self {
            PostSet::Labeled => "labeled",
            PostSet::Unlabeled => "unlabeled",
        }
    }
}

impl FromStr for PostSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" | "labelled" => Ok(PostSet::Labeled),
            "unlabeled" | "unlabelled" => Ok(PostSet::Unlabeled),
            other => Err(format!("unknown set `{other}` (expected labeled or unlabeled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    TP,
    FP,
    TN,
    FN,
}

impl Quadrant {
    pub fn of(actual: Label, predicted: Label) -> Self {
        match (actual, predicted) {
            (Label::Positive, Label::Positive) => Quadrant::TP,
            (Label::Negative, Label::Positive) => Quadrant::FP,
            (Label::Negative, Label::Negative) => Quadrant::TN,
            (Label::Positive, Label::Negative) => Quadrant::FN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::TP => "TP",
            Quadrant::FP => "FP",
            Quadrant::TN => "TN",
            Quadrant::FN => "FN",
        }
    }
}

/// How labeled posts are scored when assigning quadrants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadrantMode {
    /// Scored by the model trained on all labels.
    Resubstitution,
    /// Scored by the cross-validation model that did not see the post.
    OutOfFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub post_id: u64,
    pub set: PostSet,
    pub distance: f64,
    pub quadrant: Option<Quadrant>,
}

/// Histogram bin covering `(lower, upper]` for non-positive distances and
/// `[lower, upper)` for positive ones, so no bin straddles the hyperplane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideCounts {
    /// Posts on the positive side of the hyperplane.
    pub pos_count: usize,
    pub neg_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub mode: QuadrantMode,
    pub bin_width: f64,
    pub labeled: SideCounts,
    pub unlabeled: SideCounts,
    pub quadrants: ConfusionCounts,
    pub labeled_bins: Vec<HistogramBin>,
    pub unlabeled_bins: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub points: Vec<DistancePoint>,
    pub summary: DistanceSummary,
}

/// Per-set JSON summary as served for one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub set: PostSet,
    pub mode: QuadrantMode,
    pub pos_count: usize,
    pub neg_count: usize,
    pub bins: Vec<HistogramBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrants: Option<ConfusionCounts>,
}

fn bin_index(distance: f64, width: f64) -> i64 {
    if distance > 0.0 {
        (distance / width).floor() as i64
    } else {
        -((-distance / width).floor() as i64) - 1
    }
}

/// Contiguous histogram from the lowest to the highest occupied bin.
pub fn histogram(distances: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    assert!(bin_width > 0.0, "bin width must be positive");
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &d in distances {
        *counts.entry(bin_index(d, bin_width)).or_insert(0) += 1;
    }
    let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    (lo..=hi)
        .map(|i| HistogramBin {
            lower: i as f64 * bin_width,
            upper: (i + 1) as f64 * bin_width,
            count: counts.get(&i).copied().unwrap_or(0),
        })
        .collect()
}

fn side_counts(distances: &[f64]) -> SideCounts {
    let pos = distances.iter().filter(|&&d| d > 0.0).count();
    SideCounts { pos_count: pos, neg_count: distances.len() - pos }
}

/// Distances of labeled and unlabeled posts to `model`'s hyperplane, with
/// resubstitution quadrants for the labeled posts.
pub fn distance_distribution<T: Real>(
    model: &LinearModel<T>,
    labeled: &[Example<T>],
    unlabeled: &[(u64, &crate::features::SparseVector<T>)],
    bin_width: f64,
) -> DistanceDistribution {
    let labeled_scored: Vec<(u64, Label, f64, Label)> = labeled
        .iter()
        .map(|e| {
            let s = model.score(&e.vector);
            (e.id, e.label, s.distance.as_f64(), s.label)
        })
        .collect();
    assemble(model, labeled_scored, unlabeled, bin_width, QuadrantMode::Resubstitution)
}

/// Like [`distance_distribution`] but labeled posts are placed using
/// out-of-fold predictions from one cross-validation run.
pub fn distance_distribution_out_of_fold<T: Real>(
    model: &LinearModel<T>,
    run: &CvRun,
    unlabeled: &[(u64, &crate::features::SparseVector<T>)],
    bin_width: f64,
) -> DistanceDistribution {
    let labeled_scored = run
        .predictions
        .iter()
        .map(|p| (p.id, p.actual, p.distance, p.predicted))
        .collect();
    assemble(model, labeled_scored, unlabeled, bin_width, QuadrantMode::OutOfFold)
}

fn assemble<T: Real>(
    model: &LinearModel<T>,
    labeled: Vec<(u64, Label, f64, Label)>,
    unlabeled: &[(u64, &crate::features::SparseVector<T>)],
    bin_width: f64,
    mode: QuadrantMode,
) -> DistanceDistribution {
    let mut points = Vec::with_capacity(labeled.len() + unlabeled.len());
    let mut quadrants = ConfusionCounts::default();
    for (id, actual, distance, predicted) in labeled {
        quadrants.record(actual, predicted);
        points.push(DistancePoint {
            post_id: id,
            set: PostSet::Labeled,
            distance,
            quadrant: Some(Quadrant::of(actual, predicted)),
        });
    }
    for &(id, x) in unlabeled {
        points.push(DistancePoint {
            post_id: id,
            set: PostSet::Unlabeled,
            distance: model.score(x).distance.as_f64(),
            quadrant: None,
        });
    }
    let dists = |set: PostSet| -> Vec<f64> {
        points.iter().filter(|p| p.set == set).map(|p| p.distance).collect()
    };
    let (ld, ud) = (dists(PostSet::Labeled), dists(PostSet::Unlabeled));
    let summary = DistanceSummary {
        mode,
        bin_width,
        labeled: side_counts(&ld),
        unlabeled: side_counts(&ud),
        quadrants,
        labeled_bins: histogram(&ld, bin_width),
        unlabeled_bins: histogram(&ud, bin_width),
    };
    DistanceDistribution { points, summary }
}

impl DistanceDistribution {
    pub fn set_summary(&self, set: PostSet) -> SetSummary {
        let s = &self.summary;
        let (sides, bins) = match set {
            PostSet::Labeled => (s.labeled, s.labeled_bins.clone()),
            PostSet::Unlabeled => (s.unlabeled, s.unlabeled_bins.clone()),
        };
        SetSummary {
            set,
            mode: s.mode,
            pos_count: sides.pos_count,
            neg_count: sides.neg_count,
            bins,
            quadrants: (set == PostSet::Labeled).then_some(s.quadrants),
        }
    }

    /// CSV `post_id,set,distance,quadrant`, optionally restricted to one set.
    pub fn write_csv<W: Write>(&self, set: Option<PostSet>, mut out: W) -> std::io::Result<()> {
        writeln!(out, "post_id,set,distance,quadrant")?;
        for p in self.points.iter().filter(|p| set.is_none_or(|s| s == p.set)) {
            writeln!(
                out,
                "{},{},{},{}",
                p.post_id,
                p.set.as_str(),
                p.distance,
                p.quadrant.map_or("none", Quadrant::as_str)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_metric_examples() {
        let m: Metrics<f64> = confusion_metrics(&ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 1 });
        assert_eq!(m.accuracy, 0.8);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);

        // Precision 2/3 with recall 1/2 needs two false negatives.
        let m: Metrics<f64> = confusion_metrics(&ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 2 });
        assert!((m.accuracy - 8.0 / 11.0).abs() < 1e-15);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);

        let m: Metrics<f64> = confusion_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 10, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 0.0, 0.0, 0.0));
        assert!(m.precision_undefined && m.recall_undefined);

        let m: Metrics<f32> = confusion_metrics(&ConfusionCounts { tp: 5, fp: 0, tn: 5, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn folds_are_stratified_within_one() {
        let labels: Vec<Label> =
            (0..53).map(|i| if i % 4 == 0 { Label::Positive } else { Label::Negative }).collect();
        let folds = stratified_folds(&labels, 5, 9).unwrap();
        for class in [Label::Positive, Label::Negative] {
            let total = labels.iter().filter(|&&l| l == class).count() as f64;
            for f in 0..5 {
                let n = labels.iter().zip(&folds).filter(|(&l, &k)| l == class && k == f).count() as f64;
                assert!((n - total / 5.0).abs() <= 1.0);
            }
        }
        let sizes: Vec<usize> = (0..5).map(|f| folds.iter().filter(|&&k| k == f).count()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn too_few_members_suggests_fewer_folds() {
        let mut labels = vec![Label::Positive; 3];
        labels.extend(vec![Label::Negative; 10]);
        let err = stratified_folds(&labels, 5, 0).unwrap_err();
        assert_eq!(err, EvalError::TooFewMembers { label: Label::Positive, count: 3, folds: 5 });
        assert!(err.to_string().contains("fewer folds"));
    }

    #[test]
    fn histogram_keeps_sides_apart() {
        let bins = histogram(&[0.05, -0.05], 0.1);
        assert_eq!(bins.len(), 2);
        assert!(bins.iter().all(|b| b.count == 1));
        assert_eq!(bins[0].upper, 0.0);
        assert_eq!(bins[1].lower, 0.0);

        let bins = histogram(&[0.0, -0.1, 0.31], 0.1);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert!(histogram(&[], 0.25).is_empty());
    }

    #[test]
    fn view_names_round_trip() {
        for v in View::ALL {
            assert_eq!(v.as_str().parse::<View>().unwrap(), v);
        }
    }

    #[test]
    fn learning_curve_csv_header() {
        let mut out = Vec::new();
        let row = LearningCurveRow { iteration: 0, view: View::Pooled, accuracy: 1.0, precision: 0.5, recall: 0.25, f1: 1.0 / 3.0 };
        write_learning_curve_csv(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), LEARNING_CURVE_HEADER);
        assert!(text.contains("0,A+B,1.000000,0.500000,0.250000,0.333333"));
    }
}
