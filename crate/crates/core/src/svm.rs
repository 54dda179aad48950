//! Linear soft-margin SVM trained in the primal.
//!
//! Minimizes `lambda/2 * |w|^2 + 1/N * sum max(0, 1 - y (w.x + b))` with
//! `lambda = 1 / (C N)` by stochastic subgradient descent (step `1 / (lambda t)`,
//! seeded per-epoch shuffling, projection onto the ball of radius
//! `1/sqrt(lambda)`). The bias is an unregularized extra coordinate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::SparseVector;
use crate::label::{Example, Label};
use crate::scalar::Real;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("degenerate training set: need at least one example of each label ({positives} positive, {negatives} negative)")]
    Degenerate { positives: usize, negatives: usize },
    #[error("degenerate training set: every feature vector is zero")]
    AllZero,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Soft-margin constant C.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once the per-epoch objective changes by less than this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 50, seed: 0, tolerance: 1e-4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if self.epochs == 0 {
            return Err(SvmError::InvalidConfig("epochs must be positive".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(SvmError::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub examples: usize,
    pub epochs_run: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective after each epoch.
    pub objective_trace: Vec<f64>,
}

/// Separating hyperplane `w.x + b = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    weights: Vec<T>,
    bias: T,
    weight_norm: T,
    config: TrainConfig,
    report: Option<TrainingReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score<T> {
    /// `w.x + b`
    pub decision: T,
    /// Signed Euclidean distance to the hyperplane, `decision / |w|`.
    pub distance: T,
    pub label: Label,
    /// The decision value was exactly zero (mapped to negative).
    pub on_boundary: bool,
}

impl<T: Real> LinearModel<T> {
    /// Model with explicit parameters (dense weights indexed by feature).
    pub fn from_parts(weights: Vec<T>, bias: T) -> Self {
        let weight_norm = norm(&weights);
        Self { weights, bias, weight_norm, config: TrainConfig::default(), report: None }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    pub fn weight_norm(&self) -> T {
        self.weight_norm
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn report(&self) -> Option<&TrainingReport> {
        self.report.as_ref()
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &SparseVector<T>) -> T {
        x.dot_dense(&self.weights) + self.bias
    }

    pub fn score(&self, x: &SparseVector<T>) -> Score<T> {
        let decision = self.decision(x);
        let distance =
            if self.weight_norm > T::zero() { decision / self.weight_norm } else { decision };
        Score {
            decision,
            distance,
            label: Label::from_decision(decision > T::zero()),
            on_boundary: decision == T::zero(),
        }
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        self.score(x).label
    }

    /// Multiplies weights and bias by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let weights: Vec<T> = self.weights.iter().map(|&w| w * factor).collect();
        Self {
            weight_norm: norm(&weights),
            weights,
            bias: self.bias * factor,
            config: self.config,
            report: self.report.clone(),
        }
    }

    /// Regularized objective of this model on `examples` for soft-margin constant `c`.
    pub fn objective_on<'a, I>(&self, examples: I, c: f64) -> T
    where
        I: IntoIterator<Item = &'a Example<T>>,
    {
        let data: Vec<&Example<T>> = examples.into_iter().collect();
        let lambda = T::lit(1.0 / (c * data.len() as f64));
        objective(&self.weights, self.bias, &data, lambda)
    }

    pub fn to_file(&self, vocabulary: Option<VocabularyRef>) -> ModelFile<T> {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            config: self.config,
            vocabulary,
            dimension: self.weights.len(),
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .map(|(i, &w)| (i as u32, w))
                .collect(),
            weight_norm: self.weight_norm,
            training_report: self.report.clone(),
        }
    }

    pub fn from_file(file: ModelFile<T>) -> Result<Self, SvmError> {
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(SvmError::ModelFile(format!(
                "schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut weights = vec![T::zero(); file.dimension];
        for (i, w) in file.weights {
            let slot = weights
                .get_mut(i as usize)
                .ok_or_else(|| SvmError::ModelFile(format!("weight index {i} out of range")))?;
            *slot = w;
        }
        let recomputed = norm(&weights);
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) * recomputed.max(T::one());
        if (recomputed - file.weight_norm).abs() > tol {
            return Err(SvmError::ModelFile(format!(
                "stored weight_norm {} disagrees with recomputed {}",
                file.weight_norm, recomputed
            )));
        }
        Ok(Self {
            weights,
            bias: file.bias,
            weight_norm: recomputed,
            config: file.config,
            report: file.training_report,
        })
    }
}

fn norm<T: Real>(w: &[T]) -> T {
    w.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Points a saved model at the vocabulary that defines its feature space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyRef {
    pub path: String,
    pub sha256: String,
}

/// On-disk JSON form of a [`LinearModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModelFile<T> {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub vocabulary: Option<VocabularyRef>,
    pub dimension: usize,
    pub bias: T,
    pub weights: Vec<(u32, T)>,
    pub weight_norm: T,
    pub training_report: Option<TrainingReport>,
}

fn hinge<T: Real>(weights: &[T], bias: T, ex: &Example<T>) -> T {
    let y = if ex.label == Label::Positive { T::one() } else { -T::one() };
    (T::one() - y * (ex.vector.dot_dense(weights) + bias)).max(T::zero())
}

/// `lambda/2 |w|^2 + mean hinge loss`.
pub fn objective<T: Real>(weights: &[T], bias: T, examples: &[&Example<T>], lambda: T) -> T {
    let n = T::from_count(examples.len());
    let loss = examples.iter().fold(T::zero(), |acc, ex| acc + hinge(weights, bias, ex));
    lambda * norm(weights).powi(2) / T::lit(2.0) + loss / n
}

/// A subgradient of [`objective`] (the zero element is chosen at kinks).
pub fn subgradient<T: Real>(
    weights: &[T],
    bias: T,
    examples: &[&Example<T>],
    lambda: T,
) -> (Vec<T>, T) {
    let n = T::from_count(examples.len());
    let mut grad: Vec<T> = weights.iter().map(|&w| lambda * w).collect();
    let mut grad_b = T::zero();
    for ex in examples {
        let y = if ex.label == Label::Positive { T::one() } else { -T::one() };
        if y * (ex.vector.dot_dense(weights) + bias) < T::one() {
            for (i, x) in ex.vector.iter() {
                if let Some(g) = grad.get_mut(i as usize) {
                    *g = *g - y * x / n;
                }
            }
            grad_b = grad_b - y / n;
        }
    }
    (grad, grad_b)
}

/// Midpoint of the interval of biases minimizing the mean hinge loss for fixed
/// weights. The loss is piecewise linear in `b` with unit slope changes at
/// `1 - w.x` (positives) and `-1 - w.x` (negatives), starting at slope `-P`,
/// so the minimum lies between the P-th and (P+1)-th smallest breakpoints.
fn best_bias<T: Real>(weights: &[T], data: &[&Example<T>]) -> T {
    let mut breaks: Vec<T> = data
        .iter()
        .map(|e| {
            let s = e.vector.dot_dense(weights);
            if e.label == Label::Positive { T::one() - s } else { -T::one() - s }
        })
        .collect();
    let p = data.iter().filter(|e| e.label == Label::Positive).count();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    let (_, &mut hi, _) = breaks.select_nth_unstable_by(p, cmp);
    let lo = breaks[..p].iter().copied().fold(T::neg_infinity(), T::max);
    (lo + hi) / T::lit(2.0)
}

/// Trains a linear SVM. Deterministic for a fixed example order and config.
pub fn train<'a, T, I>(examples: I, config: &TrainConfig) -> Result<LinearModel<T>, SvmError>
where
    T: Real,
    I: IntoIterator<Item = &'a Example<T>>,
{
    config.validate()?;
    let data: Vec<&Example<T>> = examples.into_iter().collect();
    let positives = data.iter().filter(|e| e.label == Label::Positive).count();
    let negatives = data.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(SvmError::Degenerate { positives, negatives });
    }
    if data.iter().all(|e| e.vector.is_zero()) {
        return Err(SvmError::AllZero);
    }

    let n = data.len();
    let dim = data.iter().map(|e| e.vector.dimension()).max().unwrap_or(0);
    let lambda = T::lit(1.0 / (config.c * n as f64));
    let radius_sq = T::one() / lambda;

    // w = scale * v, so the per-step shrink is O(1). The bias is held fixed
    // during an epoch and refitted exactly at its end.
    let mut v = vec![T::zero(); dim];
    let mut scale = T::one();
    let mut v_sq = T::zero();
    let mut bias = T::zero();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;

    let initial_objective = objective(&v, bias, &data, lambda).as_f64();
    let mut trace: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut converged = false;
    let mut weights = v.clone();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let ex = data[i];
            let y = if ex.label == Label::Positive { T::one() } else { -T::one() };
            let eta = T::one() / (lambda * T::lit(t as f64));
            let mut vx = ex.vector.dot_dense(&v);
            let margin = y * (scale * vx + bias);

            let shrink = T::one() - T::one() / T::lit(t as f64);
            if shrink <= T::zero() {
                v.iter_mut().for_each(|x| *x = T::zero());
                scale = T::one();
                v_sq = T::zero();
                vx = T::zero();
            } else {
                scale = scale * shrink;
            }

            if margin < T::one() {
                let a = eta * y / scale;
                v_sq = v_sq + T::lit(2.0) * a * vx + a * a * ex.vector.squared_norm();
                for (j, xj) in ex.vector.iter() {
                    v[j as usize] = v[j as usize] + a * xj;
                }
            }

            let w_sq = scale * scale * v_sq;
            if w_sq > radius_sq {
                scale = scale * (radius_sq / w_sq).sqrt();
            }
            if scale < T::lit(1e-6) {
                v.iter_mut().for_each(|x| *x = *x * scale);
                v_sq = v.iter().fold(T::zero(), |a, &x| a + x * x);
                scale = T::one();
            }
        }
        weights = v.iter().map(|&x| x * scale).collect();
        bias = best_bias(&weights, &data);
        let obj = objective(&weights, bias, &data, lambda).as_f64();
        let settled = trace.last().is_some_and(|&prev| (prev - obj).abs() < config.tolerance);
        trace.push(obj);
        if settled {
            converged = true;
            break;
        }
    }

    let report = TrainingReport {
        examples: n,
        epochs_run: trace.len(),
        converged,
        initial_objective,
        final_objective: *trace.last().unwrap_or(&initial_objective),
        objective_trace: trace,
    };
    let mut model = LinearModel::from_parts(weights, bias);
    model.config = *config;
    model.report = Some(report);
    Ok(model)
}
