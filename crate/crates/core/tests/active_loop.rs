use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use perfsieve::active_loop::{
    label_state_hash, replay_journal, ActiveLearner, LabeledExample, LoopConfig, LoopError, OverlapSchedule, PostPool,
};
use perfsieve::corpus::Corpus;
use perfsieve::evaluation::View;
use perfsieve::features::{FeatureConfig, Vocabulary};
use perfsieve::label::Label;
use perfsieve::store::{ProjectDir, ProjectMeta};
use perfsieve::synthetic::separable;

struct Fixture {
    corpus: Corpus,
    vocabulary: Vocabulary,
    truth: BTreeMap<u64, Label>,
    learner: ActiveLearner,
    meta: ProjectMeta,
}

fn fixture(n: usize, batch: usize, overlap: f64) -> Fixture {
    let posts = separable(n, 9);
    let truth = posts.iter().map(|p| (p.post.id, p.label)).collect();
    let corpus = Corpus::new(posts.into_iter().map(|p| p.post).collect(), None, "synthetic").unwrap();
    let features = FeatureConfig { n_max: 2, ..FeatureConfig::default() };
    let vocabulary = Vocabulary::build(corpus.posts().iter().map(|p| p.body_text.as_str()), &features).unwrap();
    let pool = Arc::new(PostPool::from_corpus(&corpus, &vocabulary));
    let mut config = LoopConfig::new("alice", "bob");
    config.batch_size = batch;
    config.overlap = OverlapSchedule::Fixed { fraction: overlap };
    config.cv.runs = 1;
    let meta = ProjectMeta::new("p", "loop test", features, config.clone());
    let learner = ActiveLearner::new(config, pool).unwrap();
    Fixture { corpus, vocabulary, truth, learner, meta }
}

fn label(post_id: u64, label: Label, who: &str, iteration: usize) -> LabeledExample {
    LabeledExample {
        post_id,
        label,
        annotator_id: who.into(),
        iteration,
        certainty: Some(4),
        rationale: None,
        criteria_version: 1,
    }
}

fn seed(f: &mut Fixture, n: u64) -> usize {
    for id in 1..=n {
        let who = if id <= n / 2 { "alice" } else { "bob" };
        f.learner.submit(label(id, f.truth[&id], who, 0)).unwrap();
    }
    n as usize
}

fn label_open_iteration(f: &mut Fixture) -> usize {
    let it = f.learner.current_iteration().clone();
    let mut n = 0;
    for (who, posts) in &it.assignments {
        for &p in posts {
            f.learner.record_label(label(p, f.truth[&p], who, it.index)).unwrap();
            n += 1;
        }
    }
    n
}

fn labeled_posts(l: &ActiveLearner) -> BTreeSet<u64> {
    l.labels().keys().map(|(p, _)| *p).collect()
}

#[test]
fn loop_invariants_over_three_iterations() {
    let mut f = fixture(400, 40, 0.25);
    let mut expected = seed(&mut f, 40);
    for round in 0..3 {
        let before = labeled_posts(&f.learner);
        let unlabeled: Vec<u64> = f.learner.pool().iter().map(|(id, _)| id).filter(|id| !before.contains(id)).collect();
        f.learner.advance().unwrap();

        // Oracle batch: sort every unlabeled post by (|distance|, id).
        let model = &f.learner.models()[&View::Pooled];
        let mut scored: Vec<(f64, u64)> = unlabeled
            .iter()
            .map(|&id| (model.score(f.learner.pool().vector(id).unwrap()).distance.abs(), id))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let it = f.learner.current_iteration().clone();
        assert_eq!(it.index, round + 1);
        assert_eq!(it.batch, scored.iter().take(40).map(|s| s.1).collect::<Vec<_>>());
        assert!(it.batch.iter().all(|p| !before.contains(p)));
        assert_eq!(it.shared().len(), 10);
        assert_eq!(it.assignments.values().map(Vec::len).sum::<usize>(), 50);

        expected += label_open_iteration(&mut f);
        assert_eq!(f.learner.labels().len(), expected);
        assert_eq!(f.learner.progress().remaining, 0);
    }
    assert_eq!(replay_journal(f.learner.journal()), *f.learner.labels());
    assert_eq!(label_state_hash(&replay_journal(f.learner.journal())), f.learner.state_hash());

    f.learner.advance().unwrap();
    let curve = f.learner.learning_curve(None);
    assert!(curve.skipped_views.is_empty(), "{:?}", curve.skipped_views);
    assert_eq!(curve.rows.len(), 4 * 3);
    for r in &curve.rows {
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(curve.skipped_iterations, vec![4]);
}

#[test]
fn resubmission_keeps_both_events_and_latest_label() {
    let mut f = fixture(120, 20, 0.0);
    f.learner.submit(label(1, Label::Positive, "alice", 0)).unwrap();
    f.learner.submit(label(1, Label::Negative, "alice", 0)).unwrap();
    assert_eq!(f.learner.journal().len(), 2);
    assert_eq!(f.learner.labels()[&(1, "alice".to_string())].label, Label::Negative);
    assert_eq!(replay_journal(f.learner.journal()), *f.learner.labels());
}

#[test]
fn submission_errors() {
    let mut f = fixture(200, 20, 0.5);
    seed(&mut f, 24);
    f.learner.advance().unwrap();
    let it = f.learner.current_iteration().clone();
    let alice_only = it.assignments["alice"].iter().find(|p| !it.assignments["bob"].contains(p)).copied().unwrap();

    let stale = LabeledExample { criteria_version: 0, ..label(alice_only, Label::Positive, "alice", 1) };
    assert!(matches!(f.learner.record_label(stale), Err(LoopError::StaleCriteria { current: 1, .. })));
    assert!(matches!(
        f.learner.record_label(label(alice_only, Label::Positive, "bob", 1)),
        Err(LoopError::NotAssigned { .. })
    ));
    assert!(matches!(
        f.learner.record_label(label(alice_only, Label::Positive, "carol", 1)),
        Err(LoopError::UnknownAnnotator(_))
    ));
    assert!(matches!(f.learner.record_label(label(1, Label::Positive, "alice", 0)), Err(LoopError::IterationClosed(0))));
    assert!(matches!(f.learner.submit(label(1, Label::Positive, "alice", 1)), Err(LoopError::IterationClosed(0))));
    assert!(matches!(f.learner.advance(), Err(LoopError::Incomplete(_))));
    let bad = LabeledExample { certainty: Some(9), ..label(alice_only, Label::Positive, "alice", 1) };
    assert!(matches!(f.learner.record_label(bad), Err(LoopError::InvalidCertainty(9))));

    f.learner.add_criteria("revised", "clarify tooling").unwrap();
    let old = label(alice_only, Label::Positive, "alice", 1);
    assert!(matches!(f.learner.record_label(old), Err(LoopError::StaleCriteria { submitted: 1, current: 2 })));
}

#[test]
fn conflicting_overlap_labels_leave_the_pooled_view() {
    let mut f = fixture(200, 20, 0.5);
    seed(&mut f, 24);
    f.learner.advance().unwrap();
    let it = f.learner.current_iteration().clone();
    let shared = it.shared();
    for (who, posts) in &it.assignments {
        for &p in posts {
            let mut l = f.truth[&p];
            if p == shared[0] && who == "bob" {
                l = if l == Label::Positive { Label::Negative } else { Label::Positive };
            }
            f.learner.record_label(label(p, l, who, 1)).unwrap();
        }
    }
    let pooled = f.learner.view_examples(View::Pooled, None);
    assert_eq!(pooled.conflicts, vec![shared[0]]);
    assert!(pooled.examples.iter().all(|e| e.id != shared[0]));
    assert_eq!(pooled.examples.len(), 24 + 20 - 1);
    let d = f.learner.disagreements();
    assert_eq!(d.len(), 1);
    assert!(d[0].both_confident);
    let report = f.learner.overlap_agreement(Some(1)).unwrap();
    assert_eq!(report.units, shared.len());
}

#[test]
fn store_round_trip_preserves_the_loop() {
    let mut f = fixture(300, 30, 0.2);
    seed(&mut f, 24);
    f.learner.advance().unwrap();
    label_open_iteration(&mut f);
    f.learner.advance().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let store = ProjectDir::new(dir.path());
    store.write_corpus(&f.corpus, &f.vocabulary).unwrap();
    store.save(&f.meta, &f.learner, &f.vocabulary).unwrap();
    let loaded = store.load().unwrap();
    let l = &loaded.learner;
    assert_eq!(l.iterations(), f.learner.iterations());
    assert_eq!(l.journal(), f.learner.journal());
    assert_eq!(l.state_hash(), f.learner.state_hash());
    assert_eq!(l.criteria(), f.learner.criteria());
    for (view, m) in f.learner.models() {
        let other = &l.models()[view];
        assert_eq!(other.weights(), m.weights());
        assert_eq!(other.bias(), m.bias());
    }
    assert_eq!(loaded.meta, f.meta);
}
