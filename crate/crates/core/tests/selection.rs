use perfsieve::active_loop::{make_assignment, select_batch, DEFAULT_BATCH_SIZE};
use perfsieve::features::SparseVector;
use perfsieve::svm::LinearModel;
use perfsieve::FeatureVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Oracle: score everything, sort the whole list by (|distance|, id), take k.
fn brute_force(model: &LinearModel<f64>, pool: &[(u64, &FeatureVector)], k: usize) -> Vec<u64> {
    let mut all: Vec<(f64, u64)> = pool
        .iter()
        .map(|(id, x)| ((x.dot_dense(model.weights()) + model.bias()).abs() / model.weight_norm(), *id))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

#[test]
fn default_batch_is_one_hundred() {
    assert_eq!(DEFAULT_BATCH_SIZE, 100);
}

#[test]
fn select_batch_equals_full_sort_on_random_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..50 {
        let dim = 30;
        let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = LinearModel::from_parts(weights, rng.gen_range(-0.5..0.5));
        let vectors: Vec<FeatureVector> = (0..1000)
            .map(|_| {
                // coarse values so exact distance ties occur
                SparseVector::from_pairs((0..4).map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(-2..=2) as f64)))
            })
            .collect();
        let mut ids: Vec<u64> = (1..=1000).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        let pool: Vec<(u64, &FeatureVector)> = ids.iter().copied().zip(vectors.iter()).collect();
        for k in [1, DEFAULT_BATCH_SIZE, 999, 1000, 1500] {
            assert_eq!(select_batch(&model, &pool, k).unwrap(), brute_force(&model, &pool, k), "trial {trial} k {k}");
        }
    }
}

proptest! {
    #[test]
    fn assignment_covers_batch(n in 0usize..250, f in 0.0f64..=1.0) {
        let batch: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let annotators = ["a".to_string(), "b".to_string()];
        let asg = make_assignment(&batch, &annotators, f);
        let a = &asg.assignments["a"];
        let b = &asg.assignments["b"];
        let shared = (f * n as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(asg.shared.len(), shared.min(n));
        prop_assert_eq!(a.len() + b.len(), n + asg.shared.len());
        prop_assert!(a.len() >= b.len() && a.len() - b.len() <= 1);
        for p in &batch {
            prop_assert!(a.contains(p) || b.contains(p));
        }
        // both lists keep batch order
        let pos = |id: &u64| batch.iter().position(|x| x == id).unwrap();
        prop_assert!(a.windows(2).all(|w| pos(&w[0]) < pos(&w[1])));
        prop_assert!(b.windows(2).all(|w| pos(&w[0]) < pos(&w[1])));
    }
}
