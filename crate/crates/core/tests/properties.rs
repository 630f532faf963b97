use std::collections::BTreeMap;

use ncal_core::acquisition::{
    cmap_bruteforce, cmap_closed_form, flip_count, score_candidates, select_top_k, zscore, AcquisitionResult,
    CandidateScore, CheckpointPredictions,
};
use ncal_core::collapse::{interclass_distances, nc1_variability, nc2_etf_deviation};
use ncal_core::pool::labeled_global_mean;
use ncal_core::trainer::{generate_blobs, BlobSpec, ToyModel, TrainConfig};
use ncal_core::{compute_class_stats, ClassStats, FeatureMatrix, PoolState, SampleId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A pool with `n` rows in `dim` dimensions; the first `labeled` rows are
/// labeled round-robin over `k` classes, so every class is present once
/// `labeled >= k`.
fn random_pool(seed: u64, n: usize, dim: usize, k: usize, labeled: usize) -> (FeatureMatrix, PoolState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.3).collect();
    let f = FeatureMatrix::new((0..n as u64).collect(), dim, data).unwrap();
    let pool = PoolState::with_labels(0..n as u64, k, (0..labeled as u64).map(|i| (i, i as usize % k))).unwrap();
    (f, pool)
}

fn random_predictions(seed: u64, ids: impl Iterator<Item = SampleId>, k: usize, t: usize) -> CheckpointPredictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
    let map: BTreeMap<SampleId, Vec<usize>> = ids.map(|id| (id, (0..t).map(|_| rng.random_range(0..k)).collect())).collect();
    CheckpointPredictions::new((0..t).collect(), map).unwrap()
}

fn score(f: &FeatureMatrix, pool: &PoolState, preds: &CheckpointPredictions) -> AcquisitionResult {
    let stats = compute_class_stats(f, pool).unwrap();
    score_candidates(f, pool, &stats, preds, &preds.final_predictions()).unwrap()
}

fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn rotate(f: &FeatureMatrix, q: &[Vec<f64>]) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = f
        .rows()
        .map(|(_, x)| q.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        .collect();
    FeatureMatrix::from_rows(f.ids().to_vec(), &rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_matches_bruteforce(seed in any::<u64>(), k in 2usize..6, dim in 2usize..8, extra in 0usize..10, class in 0usize..6) {
        let labeled = k + extra;
        let (f, pool) = random_pool(seed, labeled + 1, dim, k, labeled);
        let class = class % k;
        let z = f.get(labeled as u64).unwrap();
        let stats = compute_class_stats(&f, &pool).unwrap();
        let fast = cmap_closed_form(&stats, class, z).unwrap();
        let slow = cmap_bruteforce(&f, &pool, class, z).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }

    #[test]
    fn closed_form_matches_bruteforce_for_empty_class(seed in any::<u64>(), k in 3usize..6, dim in 2usize..8) {
        // Only classes 0..k-1 are labeled; the candidate lands in class k-1.
        let (f, _) = random_pool(seed, 2 * k, dim, k, 0);
        let pool = PoolState::with_labels(0..2 * k as u64, k, (0..k as u64 - 1).map(|i| (i, i as usize))).unwrap();
        let z = f.get(2 * k as u64 - 1).unwrap();
        let stats = compute_class_stats(&f, &pool).unwrap();
        let fast = cmap_closed_form(&stats, k - 1, z).unwrap();
        let slow = cmap_bruteforce(&f, &pool, k - 1, z).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()));
    }

    #[test]
    fn ranking_is_scale_invariant(seed in any::<u64>(), exp in -2i32..=2) {
        let (f, pool) = random_pool(seed, 40, 4, 3, 15);
        let preds = random_predictions(seed, 0..40, 3, 5);
        let base = score(&f, &pool, &preds);
        let scaled = score(&f.scaled(10f64.powi(exp)).unwrap(), &pool, &preds);
        prop_assert_eq!(base.ranked_ids(), scaled.ranked_ids());
        for (a, b) in base.candidates.iter().zip(&scaled.candidates) {
            prop_assert!((a.cmap_raw - b.cmap_raw).abs() <= 1e-9 * (1.0 + a.cmap_raw.abs()));
        }
    }

    #[test]
    fn fused_score_is_symmetric(a in prop::collection::vec(-1e3f64..1e3, 2..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(0u32..20) as f64).collect();
        let (za, zb) = (zscore(&a).unwrap(), zscore(&b).unwrap());
        for i in 0..a.len() {
            prop_assert_eq!((za[i] + zb[i]) / 2.0, (zb[i] + za[i]) / 2.0);
        }
    }

    #[test]
    fn flip_count_bounds(seq in prop::collection::vec(0usize..4, 2..30)) {
        let ff = flip_count(&seq).unwrap() as usize;
        prop_assert!(ff < seq.len());
        let distinct = seq.iter().collect::<std::collections::BTreeSet<_>>().len();
        prop_assert!(ff + 1 >= distinct);
        prop_assert_eq!(ff == 0, distinct == 1);
    }

    #[test]
    fn top_k_matches_full_sort(scores in prop::collection::vec(-3i32..3, 1..50), k in 0usize..50) {
        let k = 1 + k % scores.len();
        let mut result = AcquisitionResult {
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| CandidateScore {
                    id: 10 * i as u64,
                    predicted_class: 0,
                    cmap_raw: 0.0,
                    ff_raw: 0,
                    cmap_std: s as f64,
                    ff_std: 0.0,
                    score: s as f64 / 2.0,
                    rank: 0,
                    selected: false,
                })
                .collect(),
        };
        result.rerank();
        let picked = select_top_k(&mut result, k).unwrap();
        let mut oracle: Vec<(i32, u64)> = scores.iter().enumerate().map(|(i, &s)| (-s, 10 * i as u64)).collect();
        oracle.sort();
        let expected: Vec<u64> = oracle.iter().take(k).map(|o| o.1).collect();
        prop_assert_eq!(picked, expected);
        prop_assert_eq!(result.candidates.iter().filter(|c| c.selected).count(), k);
    }

    #[test]
    fn nc2_is_rotation_invariant(seed in any::<u64>(), k in 2usize..6, dim in 2usize..7) {
        let (f, pool) = random_pool(seed, 4 * k, dim, k, 4 * k);
        let q = orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), dim);
        let etf = |f: &FeatureMatrix| {
            let stats = compute_class_stats(f, &pool).unwrap();
            nc2_etf_deviation(&stats, &labeled_global_mean(f, &pool).unwrap()).unwrap()
        };
        let (a, b) = (etf(&f), etf(&rotate(&f, &q)));
        prop_assert!((a.cos_mean - b.cos_mean).abs() < 1e-9);
        prop_assert!((a.cos_std - b.cos_std).abs() < 1e-9);
        let nc1 = nc1_variability(&f, &pool).unwrap();
        prop_assert!((nc1 - nc1_variability(&rotate(&f, &q), &pool).unwrap()).abs() < 1e-9 * (1.0 + nc1));
    }

    #[test]
    fn interclass_distance_scales_linearly(seed in any::<u64>(), lambda in 0.01f64..100.0) {
        let (f, pool) = random_pool(seed, 12, 3, 4, 12);
        let (m, v) = interclass_distances(&compute_class_stats(&f, &pool).unwrap()).unwrap();
        let (ms, vs) = interclass_distances(&compute_class_stats(&f.scaled(lambda).unwrap(), &pool).unwrap()).unwrap();
        prop_assert!((ms - lambda * m).abs() <= 1e-9 * lambda * m);
        for (a, b) in v.iter().zip(&vs) {
            prop_assert!((b - lambda * a).abs() <= 1e-9 * lambda * a.max(1e-12));
        }
    }
}

#[test]
fn scoring_is_independent_of_thread_count() {
    let (f, pool) = random_pool(5, 400, 6, 5, 60);
    let preds = random_predictions(5, 0..400, 5, 8);
    let run = |n: usize| {
        let tp = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        tp.install(|| score(&f, &pool, &preds))
    };
    let one = run(1);
    for n in [2, 4] {
        assert_eq!(run(n), one);
    }
}

#[test]
fn empty_class_closed_form_is_dot_with_unit_sum() {
    let stats = ClassStats::from_means(vec![2, 3, 0], vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
    let v = cmap_closed_form(&stats, 2, &[3.0, 4.0]).unwrap();
    assert!((v - 1.4).abs() < 1e-12);
}

#[test]
fn nc1_shrinks_over_final_quartile() {
    let ds = generate_blobs(&BlobSpec::balanced(4, 200, 8, 6.0, 1.0, 11)).unwrap();
    let labeled: Vec<(SampleId, usize)> = ds.features.ids().iter().copied().zip(ds.labels.iter().copied()).collect();
    let pool = PoolState::with_labels(ds.features.ids().iter().copied(), 4, labeled.clone()).unwrap();
    let base = TrainConfig::default();
    let quartile = base.epochs / 4;
    let mut model = ToyModel::new(8, base.hidden, 4, 11);
    let warmup = TrainConfig {
        epochs: base.epochs - quartile,
        ..base.clone()
    };
    model.train(&warmup, &ds.features, &labeled, &[]).unwrap();
    let mut nc1 = vec![nc1_variability(&model.embed(&ds.features).unwrap(), &pool).unwrap()];
    for stage in 0..5u64 {
        let cfg = TrainConfig {
            epochs: quartile / 5,
            seed: 100 + stage,
            ..base.clone()
        };
        model.train(&cfg, &ds.features, &labeled, &[]).unwrap();
        nc1.push(nc1_variability(&model.embed(&ds.features).unwrap(), &pool).unwrap());
    }
    assert!(nc1.last().unwrap() < &nc1[0], "{nc1:?}");
    for w in nc1.windows(2) {
        assert!(w[1] <= w[0] * 1.02, "{nc1:?}");
    }
}
