//! Pool-based active-learning simulator.
//!
//! Each cycle re-initializes and trains the toy model on the labeled pool,
//! evaluates it on a held-out split, measures collapse diagnostics, and
//! (until the budget is spent) selects a batch with the configured strategy,
//! queries the noisy label oracle and grows the labeled pool.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{score_candidates, select_top_k, window_predictions};
use crate::collapse::{collapse_report, CollapseReport};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pool::{compute_class_stats, FeatureMatrix, PoolState, SampleId};
use crate::trainer::{generate_blobs, BlobSpec, SyntheticDataset, ToyModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ncal,
    Random,
    Coreset,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ncal, Strategy::Random, Strategy::Coreset];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ncal => "ncal",
            Strategy::Random => "random",
            Strategy::Coreset => "coreset",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ncal" | "ncal-r" => Ok(Strategy::Ncal),
            "random" => Ok(Strategy::Random),
            "coreset" => Ok(Strategy::Coreset),
            other => Err(Error::InvalidSpec(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Synthetic data for a simulation. `per_class` counts samples before the
/// held-out split is removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub stddev: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 625,
            dim: 16,
            separation: 3.0,
            stddev: 1.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub initial_fraction: f64,
    pub acquisition_fraction: f64,
    pub budget_fraction: f64,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub longtail_beta: f64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            initial_fraction: 0.1,
            acquisition_fraction: 0.05,
            budget_fraction: 0.4,
            strategy: Strategy::Ncal,
            seeds: vec![0],
            noise_rate: 0.0,
            longtail_beta: 0.0,
            dataset: DatasetConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return bad(format!("initial_fraction {} outside (0, 1)", self.initial_fraction));
        }
        if !(self.acquisition_fraction > 0.0 && self.acquisition_fraction < 1.0) {
            return bad(format!("acquisition_fraction {} outside (0, 1)", self.acquisition_fraction));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad(format!("budget_fraction {} outside (0, 1]", self.budget_fraction));
        }
        if self.budget_fraction < self.initial_fraction {
            return bad("budget_fraction below initial_fraction".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1)", self.noise_rate));
        }
        if !(self.longtail_beta >= 0.0) || !self.longtail_beta.is_finite() {
            return bad(format!("longtail_beta {} must be a finite value >= 0", self.longtail_beta));
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        acquisition_cycles(self)?;
        Ok(())
    }
}

/// Number of acquisitions that take the labeled fraction from initial to
/// budget; the gap must be a whole number of acquisition steps.
pub fn acquisition_cycles(config: &ProtocolConfig) -> Result<usize> {
    let steps = (config.budget_fraction - config.initial_fraction) / config.acquisition_fraction;
    let cycles = steps.round();
    if (steps - cycles).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "budget {} is not reachable from {} in whole steps of {}",
            config.budget_fraction, config.initial_fraction, config.acquisition_fraction
        )));
    }
    Ok(cycles as usize)
}

/// Label counts for each cycle, from the original pool size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial: usize,
    pub batch: usize,
    pub cycles: usize,
}

impl Schedule {
    pub fn new(config: &ProtocolConfig, n: usize) -> Result<Self> {
        let initial = (config.initial_fraction * n as f64).round() as usize;
        let batch = (config.acquisition_fraction * n as f64).round() as usize;
        let cycles = acquisition_cycles(config)?;
        let schedule = Self { initial, batch, cycles };
        if initial == 0 || (cycles > 0 && batch == 0) || schedule.labeled_after(cycles) > n {
            return Err(Error::InvalidSpec(format!(
                "pool of {n} too small for schedule {schedule:?}"
            )));
        }
        Ok(schedule)
    }

    pub fn labeled_after(&self, cycle: usize) -> usize {
        self.initial + cycle * self.batch
    }
}

/// Deterministic noisy annotator: flips a label to a uniformly drawn other
/// class with probability `noise_rate`, keyed on `(seed, sample_id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyOracle {
    pub num_classes: usize,
    pub noise_rate: f64,
    pub seed: u64,
}

impl NoisyOracle {
    /// The oracle used by a protocol run with `run_seed`.
    pub fn for_run(run_seed: u64, num_classes: usize, noise_rate: f64) -> Self {
        Self {
            num_classes,
            noise_rate,
            seed: mix(run_seed, 0x0ac1e),
        }
    }

    pub fn label(&self, id: SampleId, true_label: usize) -> usize {
        oracle_label(id, true_label, self.num_classes, self.noise_rate, self.seed)
    }

    pub fn is_flipped(&self, id: SampleId, true_label: usize) -> bool {
        self.label(id, true_label) != true_label
    }
}

pub fn oracle_label(id: SampleId, true_label: usize, num_classes: usize, noise_rate: f64, seed: u64) -> usize {
    if noise_rate <= 0.0 || num_classes < 2 {
        return true_label;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, id));
    if rng.random::<f64>() >= noise_rate {
        return true_label;
    }
    let other = rng.random_range(0..num_classes - 1);
    if other >= true_label {
        other + 1
    } else {
        other
    }
}

/// `max(1, round(n_max · e^{−β·c}))` for classes `c = 0..k`.
pub fn longtail_counts(n_max: usize, num_classes: usize, beta: f64) -> Vec<usize> {
    (0..num_classes)
        .map(|c| ((n_max as f64 * (-beta * c as f64).exp()).round() as usize).max(1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongTail {
    pub counts: Vec<usize>,
    /// Kept ids per class, ascending.
    pub ids: Vec<Vec<SampleId>>,
}

/// Subsamples each class (given in descending-size order) down to its
/// decayed count, uniformly without replacement. `n_max` is the size of the
/// largest class.
pub fn make_longtail(class_ids: &[Vec<SampleId>], beta: f64, seed: u64) -> Result<LongTail> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidSpec(format!("beta {beta} must be a finite value >= 0")));
    }
    let n_max = class_ids.iter().map(Vec::len).max().unwrap_or(0);
    let targets = longtail_counts(n_max, class_ids.len(), beta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(class_ids.len());
    let mut ids = Vec::with_capacity(class_ids.len());
    for (members, &target) in class_ids.iter().zip(&targets) {
        let keep = target.min(members.len());
        let mut kept: Vec<SampleId> = members.choose_multiple(&mut rng, keep).copied().collect();
        kept.sort_unstable();
        counts.push(keep);
        ids.push(kept);
    }
    Ok(LongTail { counts, ids })
}

/// Uniform sample of `k` ids without replacement, in draw order.
pub fn random_select(unlabeled: &[SampleId], k: usize, seed: u64) -> Result<Vec<SampleId>> {
    if k > unlabeled.len() {
        return Err(Error::BudgetExceedsPool { k, pool: unlabeled.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, unlabeled.len(), k)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect())
}

/// Greedy k-center: repeatedly take the candidate farthest from everything
/// labeled or already taken. Ties go to the smallest id.
pub fn coreset_select(
    features: &FeatureMatrix,
    labeled: &[SampleId],
    candidates: &[SampleId],
    k: usize,
) -> Result<Vec<SampleId>> {
    if k > candidates.len() {
        return Err(Error::BudgetExceedsPool { k, pool: candidates.len() });
    }
    let mut cands: Vec<(SampleId, &[f64])> = candidates
        .iter()
        .map(|&id| features.get(id).map(|z| (id, z)))
        .collect::<Result<_>>()?;
    cands.sort_by_key(|c| c.0);
    let centers: Vec<&[f64]> = labeled.iter().map(|&id| features.get(id)).collect::<Result<_>>()?;
    let mut nearest: Vec<f64> = cands
        .iter()
        .map(|(_, z)| centers.iter().map(|c| linalg::sq_dist(z, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; cands.len()];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if !taken[i] && best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= candidates");
        taken[b] = true;
        picked.push(cands[b].0);
        let center = cands[b].1;
        for i in 0..cands.len() {
            if !taken[i] {
                nearest[i] = nearest[i].min(linalg::sq_dist(cands[i].1, center));
            }
        }
    }
    Ok(picked)
}

/// Pool and held-out test split for a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub pool: SyntheticDataset,
    pub test: SyntheticDataset,
}

/// Generates blobs, removes the held-out split, and applies the long-tail
/// subsampling to the pool when `longtail_beta > 0`.
pub fn prepare_data(config: &ProtocolConfig) -> Result<ExperimentData> {
    let d = &config.dataset;
    let spec = BlobSpec::balanced(d.num_classes, d.per_class, d.dim, d.separation, d.stddev, d.seed);
    let all = generate_blobs(&spec)?;
    let (mut pool, test) = all.split_holdout(d.test_fraction, mix(d.seed, 0x7e57))?;
    if config.longtail_beta > 0.0 {
        let mut by_class = vec![Vec::new(); pool.num_classes];
        for (i, &id) in pool.features.ids().iter().enumerate() {
            by_class[pool.labels[i]].push(id);
        }
        let tail = make_longtail(&by_class, config.longtail_beta, mix(d.seed, 0x7a11))?;
        let mut rows: Vec<usize> = tail
            .ids
            .iter()
            .flatten()
            .map(|&id| pool.features.position(id).expect("id from pool"))
            .collect();
        rows.sort_unstable();
        pool = pool.subset(&rows)?;
    }
    Ok(ExperimentData { pool, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub cycle: usize,
    pub labeled_count: usize,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub tpt_start: usize,
    pub tpt_end: usize,
    pub collapse: CollapseReport,
    pub selected: Vec<SampleId>,
    pub noisy_selected: usize,
    pub scores_finite: bool,
}

/// One seeded run of the protocol with `config.strategy`.
pub fn run_protocol(config: &ProtocolConfig, data: &ExperimentData, seed: u64) -> Result<Vec<CycleRecord>> {
    config.validate()?;
    let pool_ds = &data.pool;
    let n = pool_ds.features.n_samples();
    let k = pool_ds.num_classes;
    let schedule = Schedule::new(config, n)?;
    let oracle = NoisyOracle::for_run(seed, k, config.noise_rate);
    let true_label = |id: SampleId| pool_ds.label_of(id).ok_or(Error::MissingSample(id));

    let mut pool = PoolState::new(pool_ds.features.ids().iter().copied(), k);
    let mut all_ids: Vec<SampleId> = pool_ds.features.ids().to_vec();
    all_ids.sort_unstable();
    for id in random_select(&all_ids, schedule.initial, mix(seed, 0x1417))? {
        pool.apply_label(id, oracle.label(id, true_label(id)?))?;
    }

    let mut records = Vec::with_capacity(schedule.cycles + 1);
    for cycle in 0..=schedule.cycles {
        let record = run_cycle(config, data, &schedule, &oracle, &mut pool, seed, cycle)
            .map_err(|e| e.in_cycle(cycle))?;
        records.push(record);
    }
    Ok(records)
}

fn run_cycle(
    config: &ProtocolConfig,
    data: &ExperimentData,
    schedule: &Schedule,
    oracle: &NoisyOracle,
    pool: &mut PoolState,
    seed: u64,
    cycle: usize,
) -> Result<CycleRecord> {
    let pool_ds = &data.pool;
    let k = pool_ds.num_classes;
    let labeled = pool.labeled_pairs();
    let labeled_count = labeled.len();
    let unlabeled: Vec<SampleId> = pool.unlabeled().iter().copied().collect();
    let acquire = cycle < schedule.cycles;
    let tracked: &[SampleId] = if acquire && config.strategy == Strategy::Ncal { &unlabeled } else { &[] };

    let cycle_seed = mix(seed, cycle as u64);
    let train_cfg = TrainConfig {
        seed: mix(cycle_seed, 1),
        ..config.training.clone()
    };
    let mut model = ToyModel::new(pool_ds.features.dim(), train_cfg.hidden, k, mix(cycle_seed, 2));
    let trace = model.train(&train_cfg, &pool_ds.features, &labeled, tracked)?;

    let correct = data
        .test
        .features
        .rows()
        .zip(&data.test.labels)
        .filter(|((_, x), &y)| model.predict(x) == y)
        .count();
    let test_accuracy = correct as f64 / data.test.features.n_samples().max(1) as f64;

    let hidden = model.embed(&pool_ds.features)?;
    let labeled_preds: BTreeMap<SampleId, usize> = labeled
        .iter()
        .map(|&(id, _)| Ok((id, model.predict(pool_ds.features.get(id)?))))
        .collect::<Result<_>>()?;
    let collapse = collapse_report(&hidden, pool, &labeled_preds)?;

    let mut selected = Vec::new();
    let mut scores_finite = true;
    if acquire {
        let batch = schedule.batch;
        selected = match config.strategy {
            Strategy::Random => random_select(&unlabeled, batch, mix(cycle_seed, 3))?,
            Strategy::Coreset => {
                let labeled_ids: Vec<SampleId> = labeled.iter().map(|l| l.0).collect();
                coreset_select(&hidden, &labeled_ids, &unlabeled, batch)?
            }
            Strategy::Ncal => {
                let stats = compute_class_stats(&hidden, pool)?;
                let (start, end) = trace.checkpoint_window();
                let preds = window_predictions(&trace.epoch_predictions, &trace.tracked, start, end)?;
                let predicted = preds.final_predictions();
                let mut result = score_candidates(&hidden, pool, &stats, &preds, &predicted)?;
                scores_finite = result
                    .candidates
                    .iter()
                    .all(|c| c.cmap_raw.is_finite() && c.score.is_finite());
                select_top_k(&mut result, batch)?
            }
        };
    }

    let mut noisy_selected = 0;
    for &id in &selected {
        let truth = pool_ds.label_of(id).ok_or(Error::MissingSample(id))?;
        let given = oracle.label(id, truth);
        if given != truth {
            noisy_selected += 1;
        }
        pool.apply_label(id, given)?;
    }
    if acquire {
        pool.cycle += 1;
    }

    Ok(CycleRecord {
        strategy: config.strategy,
        seed,
        cycle,
        labeled_count,
        test_accuracy,
        train_accuracy: trace.train_accuracy.last().copied().unwrap_or(0.0),
        tpt_start: trace.tpt_start,
        tpt_end: trace.tpt_end,
        collapse,
        selected,
        noisy_selected,
        scores_finite,
    })
}

/// Records of one `(strategy, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<CycleRecord>,
}

impl RunResult {
    pub fn final_test_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_accuracy)
    }
}

/// Runs every `(strategy, seed)` combination on shared data. Runs execute
/// in parallel; results come back ordered by `(strategy, seed)`.
pub fn run_experiment(config: &ProtocolConfig, strategies: &[Strategy]) -> Result<Vec<RunResult>> {
    config.validate()?;
    let data = prepare_data(config)?;
    let mut jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    jobs.sort_unstable();
    jobs.dedup();
    jobs.par_iter()
        .map(|&(strategy, seed)| {
            let cfg = ProtocolConfig {
                strategy,
                ..config.clone()
            };
            run_protocol(&cfg, &data, seed).map(|records| RunResult {
                strategy,
                seed,
                records,
            })
        })
        .collect()
}

/// Mean final test accuracy per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub seeds: usize,
    pub mean_final_accuracy: f64,
    pub final_accuracies: Vec<f64>,
    pub final_labeled: usize,
    pub total_noisy_selected: usize,
}

pub fn summarize(runs: &[RunResult]) -> Vec<StrategySummary> {
    let mut by: BTreeMap<Strategy, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        by.entry(r.strategy).or_default().push(r);
    }
    by.into_iter()
        .map(|(strategy, rs)| {
            let final_accuracies: Vec<f64> = rs.iter().map(|r| r.final_test_accuracy()).collect();
            StrategySummary {
                strategy,
                seeds: rs.len(),
                mean_final_accuracy: final_accuracies.iter().sum::<f64>() / rs.len() as f64,
                final_accuracies,
                final_labeled: rs
                    .first()
                    .and_then(|r| r.records.last())
                    .map_or(0, |rec| rec.labeled_count),
                total_noisy_selected: rs
                    .iter()
                    .flat_map(|r| &r.records)
                    .map(|rec| rec.noisy_selected)
                    .sum(),
            }
        })
        .collect()
}

/// splitmix64 finalizer over `a ^ rotl(b)`, used to derive independent
/// per-purpose seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_config(strategy: Strategy) -> ProtocolConfig {
        ProtocolConfig {
            strategy,
            seeds: vec![1],
            dataset: DatasetConfig {
                num_classes: 3,
                per_class: 50,
                dim: 4,
                separation: 3.0,
                stddev: 1.0,
                test_fraction: 0.2,
                seed: 4,
            },
            training: TrainConfig {
                hidden: 16,
                epochs: 15,
                ..TrainConfig::default()
            },
            ..ProtocolConfig::default()
        }
    }

    #[test]
    fn cycle_count_follows_fractions() {
        let cfg = ProtocolConfig::default();
        assert_eq!(acquisition_cycles(&cfg).unwrap(), 6);
        let s = Schedule::new(&cfg, 130_000).unwrap();
        assert_eq!((s.initial, s.batch, s.cycles), (13_000, 6_500, 6));
        assert_eq!(s.labeled_after(6), 52_000);

        let flat = ProtocolConfig { budget_fraction: 0.1, ..cfg.clone() };
        assert_eq!(acquisition_cycles(&flat).unwrap(), 0);
        let ragged = ProtocolConfig { budget_fraction: 0.33, ..cfg };
        assert!(acquisition_cycles(&ragged).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = ProtocolConfig::default();
        ok.validate().unwrap();
        for bad in [
            ProtocolConfig { initial_fraction: 0.0, ..ok.clone() },
            ProtocolConfig { acquisition_fraction: 1.0, ..ok.clone() },
            ProtocolConfig { noise_rate: 1.0, ..ok.clone() },
            ProtocolConfig { longtail_beta: -0.1, ..ok.clone() },
            ProtocolConfig { seeds: vec![], ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn oracle_behaviour() {
        for id in 0..200 {
            assert_eq!(oracle_label(id, 3, 5, 0.0, 9), 3);
            assert_eq!(oracle_label(id, 2, 5, 0.5, 9), oracle_label(id, 2, 5, 0.5, 9));
            let l = oracle_label(id, 2, 5, 0.5, 9);
            assert!(l < 5);
        }
        let flipped = (0..10_000).filter(|&id| oracle_label(id, 0, 10, 0.2, 77) != 0).count();
        assert!((flipped as f64 / 10_000.0 - 0.2).abs() <= 0.01, "{flipped}");
    }

    #[test]
    fn flipped_labels_are_uniform_over_other_classes() {
        let mut hist = [0usize; 4];
        for id in 0..20_000 {
            hist[oracle_label(id, 1, 4, 0.9, 3)] += 1;
        }
        let flips = (hist[0] + hist[2] + hist[3]) as f64;
        for c in [0, 2, 3] {
            assert!((hist[c] as f64 / flips - 1.0 / 3.0).abs() < 0.02, "{hist:?}");
        }
    }

    #[test]
    fn longtail_shapes() {
        assert_eq!(longtail_counts(40, 5, 0.0), vec![40; 5]);
        let c = longtail_counts(1300, 100, 0.05);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(c[0], 1300);
        assert_eq!(longtail_counts(10, 4, 50.0), vec![10, 1, 1, 1]);

        let classes: Vec<Vec<u64>> = (0..4u64).map(|c| (c * 100..c * 100 + 20).collect()).collect();
        let balanced = make_longtail(&classes, 0.0, 1).unwrap();
        assert_eq!(balanced.ids, classes);
        let tail = make_longtail(&classes, 0.5, 1).unwrap();
        assert_eq!(tail.counts, longtail_counts(20, 4, 0.5));
        for (c, ids) in tail.ids.iter().enumerate() {
            assert!(ids.iter().all(|id| classes[c].contains(id)));
        }
        assert_eq!(tail, make_longtail(&classes, 0.5, 1).unwrap());
        assert!(make_longtail(&classes, f64::NAN, 1).is_err());
    }

    #[test]
    fn random_select_properties() {
        let ids: Vec<u64> = (10..20).collect();
        let mut all = random_select(&ids, 10, 5).unwrap();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(random_select(&ids, 3, 5).unwrap(), random_select(&ids, 3, 5).unwrap());
        assert!(matches!(random_select(&ids, 11, 5), Err(Error::BudgetExceedsPool { .. })));

        let mut freq = [0usize; 10];
        for s in 0..10_000 {
            freq[(random_select(&ids, 1, s).unwrap()[0] - 10) as usize] += 1;
        }
        for f in freq {
            assert!((f as f64 / 10_000.0 - 0.1).abs() <= 0.01, "{freq:?}");
        }
    }

    #[test]
    fn coreset_picks_farthest_first() {
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 5.0, 2.0, -3.0].iter().map(|&x| vec![x]).collect();
        let f = FeatureMatrix::from_rows((0..5).collect(), &rows).unwrap();
        assert_eq!(coreset_select(&f, &[0], &[1, 2, 3, 4], 1).unwrap(), vec![2]);
        assert_eq!(coreset_select(&f, &[0], &[1, 2, 3, 4], 2).unwrap(), vec![2, 4]);
        let mut all = coreset_select(&f, &[0], &[1, 2, 3, 4], 4).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3, 4]);
        assert!(coreset_select(&f, &[0], &[1, 2], 3).is_err());
        // ties go to the smaller id; no labeled points starts at the smallest id
        let sym = FeatureMatrix::from_rows(vec![0, 7, 3], &[vec![0.0], vec![2.0], vec![-2.0]]).unwrap();
        assert_eq!(coreset_select(&sym, &[0], &[7, 3], 1).unwrap(), vec![3]);
        assert_eq!(coreset_select(&sym, &[], &[7, 3, 0], 1).unwrap(), vec![0]);
    }

    #[test]
    fn zero_cycle_budget_gives_one_record() {
        let cfg = ProtocolConfig { budget_fraction: 0.1, ..small_config(Strategy::Random) };
        let data = prepare_data(&cfg).unwrap();
        let recs = run_protocol(&cfg, &data, 1).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].selected.is_empty());
    }

    #[test]
    fn protocol_accounting_and_no_relabeling() {
        for strategy in Strategy::ALL {
            let cfg = small_config(strategy);
            let data = prepare_data(&cfg).unwrap();
            let n = data.pool.features.n_samples();
            let schedule = Schedule::new(&cfg, n).unwrap();
            let recs = run_protocol(&cfg, &data, 1).unwrap();
            assert_eq!(recs.len(), 7);
            let mut seen = BTreeSet::new();
            for (t, r) in recs.iter().enumerate() {
                assert_eq!(r.labeled_count, schedule.labeled_after(t));
                for &id in &r.selected {
                    assert!(seen.insert(id), "{id} selected twice");
                }
                assert_eq!(r.selected.len(), if t < 6 { schedule.batch } else { 0 });
            }
        }
    }

    #[test]
    fn strategies_share_the_first_cycle() {
        let a = small_config(Strategy::Random);
        let data = prepare_data(&a).unwrap();
        let ra = run_protocol(&a, &data, 1).unwrap();
        let rb = run_protocol(&ProtocolConfig { strategy: Strategy::Coreset, ..a.clone() }, &data, 1).unwrap();
        assert_eq!(ra[0].test_accuracy, rb[0].test_accuracy);
        assert_eq!(ra[0].collapse, rb[0].collapse);
        assert_ne!(ra[0].selected, rb[0].selected);
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = small_config(Strategy::Ncal);
        let data = prepare_data(&cfg).unwrap();
        assert_eq!(run_protocol(&cfg, &data, 3).unwrap(), run_protocol(&cfg, &data, 3).unwrap());
    }

    #[test]
    fn longtail_pool_is_subsampled() {
        let cfg = ProtocolConfig { longtail_beta: 0.3, ..small_config(Strategy::Random) };
        let data = prepare_data(&cfg).unwrap();
        let mut counts = vec![0; 3];
        for &l in &data.pool.labels {
            counts[l] += 1;
        }
        assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
    }
}
