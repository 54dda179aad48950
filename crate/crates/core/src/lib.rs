//! Building blocks for mining performance-related discussions from Q&A dumps
//! with a linear SVM: corpus ingestion, n-gram features, uncertainty-sampled
//! annotation batches, self-training and inter-annotator agreement.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32`, `f64`); agreement
//! statistics are generic over [`scalar::Field`], which also covers exact
//! rationals. The aliases below fix the scalar types used by the service.

pub mod active_loop;
pub mod agreement;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod label;
pub mod scalar;
pub mod self_training;
pub mod store;
pub mod svm;
pub mod synthetic;

pub use active_loop::{ActiveLearner, LabeledExample, LoopConfig, LoopError};
pub use corpus::{Corpus, Post, TagFilter};
pub use evaluation::View;
pub use features::{FeatureConfig, Vocabulary};
pub use label::Label;
pub use svm::TrainConfig;

use num_rational::Rational64;

pub type FeatureVector = features::SparseVector<f64>;
pub type FeatureVector32 = features::SparseVector<f32>;
pub type Example = label::Example<f64>;
pub type LinearModel = svm::LinearModel<f64>;
pub type LinearModel32 = svm::LinearModel<f32>;
pub type MetricsReport = evaluation::MetricsReport<f64>;
pub type DistanceDistribution = evaluation::DistanceDistribution;
pub type AgreementReport = agreement::AgreementReport<f64>;
pub type ExactAgreementReport = agreement::AgreementReport<Rational64>;

/// `floor(f * n)` capped at `n`, tolerant of representation error such as
/// `0.29 * 100 = 28.999999999999996`.
pub(crate) fn fraction_of(f: f64, n: usize) -> usize {
    ((f * n as f64 + 1e-9).floor().max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::fraction_of;

    #[test]
    fn fraction_floor() {
        assert_eq!(fraction_of(0.29, 100), 29);
        assert_eq!(fraction_of(0.05, 10), 0);
        assert_eq!(fraction_of(0.25, 100), 25);
        assert_eq!(fraction_of(1.0, 7), 7);
        assert_eq!(fraction_of(0.5, 3), 1);
    }
}
