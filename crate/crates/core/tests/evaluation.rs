use perfsieve::evaluation::{
    confusion_metrics, cross_validate_augmented, distance_distribution, distance_distribution_out_of_fold, histogram,
    stratified_folds, ConfusionCounts, CvConfig, Metrics, PostSet, Quadrant,
};
use perfsieve::features::{FeatureConfig, Vocabulary};
use perfsieve::label::{Example, Label};
use perfsieve::svm::{train, TrainConfig};
use perfsieve::synthetic::{topic_corpus, TopicConfig};
use perfsieve::FeatureVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_examples(n: usize, seed: u64) -> Vec<Example<f64>> {
    let posts = topic_corpus(&TopicConfig { posts: n, label_noise: 0.15, seed, ..TopicConfig::default() });
    let vocab =
        Vocabulary::build(posts.iter().map(|p| p.post.body_text.as_str()), &FeatureConfig::default()).unwrap();
    posts.iter().map(|p| Example::new(p.post.id, vocab.vectorize(&p.post.body_text), p.label)).collect()
}

#[test]
fn metrics_match_hand_formulas_on_random_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let c = ConfusionCounts {
            tp: rng.gen_range(1..50),
            fp: rng.gen_range(1..50),
            tn: rng.gen_range(0..50),
            fn_: rng.gen_range(1..50),
        };
        let m: Metrics<f64> = confusion_metrics(&c);
        let total = (c.tp + c.fp + c.tn + c.fn_) as f64;
        assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / total);
        assert_eq!(m.precision, c.tp as f64 / (c.tp + c.fp) as f64);
        assert_eq!(m.recall, c.tp as f64 / (c.tp + c.fn_) as f64);
        let f1 = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
        assert!((m.f1 - f1).abs() < 1e-12);
        assert!(!m.precision_undefined && !m.recall_undefined);
    }
}

#[test]
fn pooled_fold_counts_equal_concatenated_predictions() {
    let data = noisy_examples(150, 1);
    let cv = CvConfig { runs: 3, ..CvConfig::default() };
    let outcome = cross_validate_augmented(&data, &[], &cv, &TrainConfig::default()).unwrap();
    for (run, per_run) in outcome.runs.iter().zip(&outcome.report.per_run) {
        let mut from_predictions = ConfusionCounts::default();
        for p in &run.predictions {
            from_predictions.record(p.actual, p.predicted);
        }
        assert_eq!(from_predictions, run.counts);
        assert_eq!(&confusion_metrics::<f64>(&from_predictions), per_run);
        // every example is evaluated exactly once per run
        let mut ids: Vec<u64> = run.predictions.iter().map(|p| p.id).collect();
        ids.sort();
        assert_eq!(ids, data.iter().map(|e| e.id).collect::<Vec<_>>());
    }
    let mean = outcome.report.per_run.iter().map(|m| m.f1).sum::<f64>() / 3.0;
    assert!((outcome.report.f1 - mean).abs() < 1e-15);
    assert_eq!(outcome.report.seeds, vec![0, 1, 2]);
}

#[test]
fn quadrants_and_histograms_account_for_every_post() {
    let data = noisy_examples(240, 2);
    let (labeled, unlabeled) = data.split_at(120);
    let model = train(labeled, &TrainConfig::default()).unwrap();
    let pool: Vec<(u64, &FeatureVector)> = unlabeled.iter().map(|e| (e.id, &e.vector)).collect();
    let dist = distance_distribution(&model, labeled, &pool, 0.25);
    let s = &dist.summary;
    let positives = labeled.iter().filter(|e| e.label == Label::Positive).count() as u64;
    assert_eq!(s.quadrants.tp + s.quadrants.fn_, positives);
    assert_eq!(s.quadrants.tn + s.quadrants.fp, labeled.len() as u64 - positives);
    assert_eq!(s.labeled_bins.iter().map(|b| b.count).sum::<usize>(), labeled.len());
    assert_eq!(s.unlabeled_bins.iter().map(|b| b.count).sum::<usize>(), unlabeled.len());
    assert_eq!(s.unlabeled.pos_count + s.unlabeled.neg_count, unlabeled.len());
    for b in s.labeled_bins.iter().chain(&s.unlabeled_bins) {
        assert!(b.upper <= 0.0 || b.lower >= 0.0, "bin straddles the hyperplane: {b:?}");
    }
    for p in dist.points.iter().filter(|p| p.set == PostSet::Labeled) {
        let e = labeled.iter().find(|e| e.id == p.post_id).unwrap();
        let expected = Quadrant::of(e.label, model.predict(&e.vector));
        assert_eq!(p.quadrant, Some(expected));
    }
    assert!(dist.points.iter().filter(|p| p.set == PostSet::Unlabeled).all(|p| p.quadrant.is_none()));

    let cv = CvConfig { runs: 1, ..CvConfig::default() };
    let outcome = cross_validate_augmented(labeled, &[], &cv, &TrainConfig::default()).unwrap();
    let oof = distance_distribution_out_of_fold(&model, &outcome.runs[0], &pool, 0.25);
    assert_eq!(oof.summary.quadrants, outcome.runs[0].counts);

    let mut csv = Vec::new();
    dist.write_csv(Some(PostSet::Unlabeled), &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("post_id,set,distance,quadrant\n"));
    assert_eq!(text.lines().count(), unlabeled.len() + 1);
}

proptest! {
    #[test]
    fn folds_are_stratified(pos in 5usize..40, neg in 5usize..80, folds in 2usize..6, seed in any::<u64>()) {
        let mut labels = vec![Label::Positive; pos];
        labels.extend(vec![Label::Negative; neg]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.gen_range(0..=i));
        }
        let assignment = stratified_folds(&labels, folds, seed).unwrap();
        for f in 0..folds {
            for (label, total) in [(Label::Positive, pos), (Label::Negative, neg)] {
                let count = labels.iter().zip(&assignment).filter(|(l, a)| **l == label && **a == f).count() as f64;
                let ideal = total as f64 / folds as f64;
                prop_assert!((count - ideal).abs() <= 1.0, "fold {f} {label:?}: {count} vs {ideal}");
            }
        }
    }

    #[test]
    fn histogram_counts_sum_to_input(d in proptest::collection::vec(-5.0f64..5.0, 0..200), w in 0.05f64..2.0) {
        let bins = histogram(&d, w);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), d.len());
        for b in &bins {
            prop_assert!(b.upper <= 0.0 || b.lower >= 0.0);
        }
    }
}
