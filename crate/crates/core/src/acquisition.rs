//! Class-mean alignment scoring, feature fluctuation, score fusion, and
//! top-k batch selection.
//!
//! The alignment perturbation of a candidate `x` with feature `z` and
//! predicted class `c` is the change in the summed pairwise cosine of class
//! means when `z` joins class `c`. Only pairs touching `c` move, so the
//! change collapses to `(ū'_c − ū_c)·(M − ū_c)` where `ū` are unit-normalized
//! means, `ū'_c` the unit mean after the update and `M` the sum of all unit
//! means. [`cmap_closed_form`] evaluates that dot product;
//! [`cmap_bruteforce`] recomputes every cosine from the raw features.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot};
use crate::pool::{ClassStats, FeatureMatrix, PoolState, SampleId};

/// Predicted labels for each sample at each checkpoint of the terminal phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPredictions {
    epochs: Vec<usize>,
    predictions: BTreeMap<SampleId, Vec<usize>>,
}

impl CheckpointPredictions {
    pub fn new(epochs: Vec<usize>, predictions: BTreeMap<SampleId, Vec<usize>>) -> Result<Self> {
        if epochs.len() < 2 {
            return Err(Error::TooFewCheckpoints {
                found: epochs.len(),
            });
        }
        if epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "checkpoint epochs must be strictly increasing".into(),
            ));
        }
        if let Some((id, p)) = predictions.iter().find(|(_, p)| p.len() != epochs.len()) {
            return Err(Error::ShapeMismatch(format!(
                "sample {id} has {} predictions for {} checkpoints",
                p.len(),
                epochs.len()
            )));
        }
        Ok(Self {
            epochs,
            predictions,
        })
    }

    pub fn epochs(&self) -> &[usize] {
        &self.epochs
    }

    pub fn predictions(&self) -> &BTreeMap<SampleId, Vec<usize>> {
        &self.predictions
    }

    pub fn get(&self, id: SampleId) -> Option<&[usize]> {
        self.predictions.get(&id).map(Vec::as_slice)
    }

    /// Prediction at the last checkpoint for every sample.
    pub fn final_predictions(&self) -> BTreeMap<SampleId, usize> {
        self.predictions
            .iter()
            .map(|(&id, p)| (id, *p.last().expect("at least two checkpoints")))
            .collect()
    }
}

/// Scores for one unlabeled candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: SampleId,
    pub predicted_class: usize,
    pub cmap_raw: f64,
    pub ff_raw: u32,
    pub cmap_std: f64,
    pub ff_std: f64,
    pub score: f64,
    pub rank: usize,
    pub selected: bool,
}

/// Per-candidate scores, ordered by ascending sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub candidates: Vec<CandidateScore>,
}

impl AcquisitionResult {
    /// Candidate ids in rank order (best first).
    pub fn ranked_ids(&self) -> Vec<SampleId> {
        let mut order: Vec<&CandidateScore> = self.candidates.iter().collect();
        order.sort_by_key(|c| c.rank);
        order.into_iter().map(|c| c.id).collect()
    }

    pub fn selected_ids(&self) -> Vec<SampleId> {
        let mut sel: Vec<&CandidateScore> = self.candidates.iter().filter(|c| c.selected).collect();
        sel.sort_by_key(|c| c.rank);
        sel.into_iter().map(|c| c.id).collect()
    }

    /// Reassigns ranks by (score descending, id ascending).
    pub fn rerank(&mut self) {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
            cb.score.total_cmp(&ca.score).then(ca.id.cmp(&cb.id))
        });
        for (rank, i) in order.into_iter().enumerate() {
            self.candidates[i].rank = rank;
        }
    }
}

/// Mean pairwise cosine similarity of the present class means.
pub fn cma(stats: &ClassStats) -> Result<f64> {
    let present: Vec<usize> = stats.present_classes.iter().copied().collect();
    let k = present.len();
    if k < 2 {
        return Err(Error::TooFewClasses { present: k });
    }
    let mut sum = 0.0;
    for &i in &present {
        for &j in &present {
            if i != j {
                sum += dot(&stats.unit_means[i], &stats.unit_means[j]);
            }
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Running-mean update `(n·μ + z)/(n + 1)`; returns `z` for an empty class.
pub fn updated_mean(stats: &ClassStats, class: usize, z: &[f64]) -> Result<Vec<f64>> {
    check_class_and_point(stats, class, z)?;
    let n = stats.counts[class];
    if n == 0 {
        return Ok(z.to_vec());
    }
    let n = n as f64;
    Ok(stats.means[class]
        .iter()
        .zip(z)
        .map(|(m, x)| (n * m + x) / (n + 1.0))
        .collect())
}

/// Alignment perturbation of adding `z` to `class`, with the pair-count
/// normalizer dropped.
///
/// For an absent class the result is `ẑ·M`: every new pair contributes one
/// cosine against an existing unit mean.
pub fn cmap_closed_form(stats: &ClassStats, class: usize, z: &[f64]) -> Result<f64> {
    check_class_and_point(stats, class, z)?;
    let present = stats.num_present();
    let after = if stats.is_present(class) { present } else { present + 1 };
    if after < 2 {
        return Err(Error::TooFewClasses { present: after });
    }
    let moved = updated_mean(stats, class, z)?;
    let moved_unit = linalg::normalized(&moved).ok_or(Error::ZeroNormMean { class })?;
    if !stats.is_present(class) {
        return Ok(dot(&moved_unit, &stats.m_sum));
    }
    let old_unit = &stats.unit_means[class];
    Ok(moved_unit
        .iter()
        .zip(old_unit)
        .zip(&stats.m_sum)
        .map(|((new, old), m)| (new - old) * (m - old))
        .sum())
}

/// Reference evaluation of the perturbation score.
///
/// Recomputes all class means from the labeled rows of `features` with and
/// without `z` assigned to `class`, evaluates the mean pairwise cosine for
/// each, and returns the difference of `CMA·K'(K'−1)/2` (the summed cosine
/// over unordered pairs of present classes).
pub fn cmap_bruteforce(
    features: &FeatureMatrix,
    pool: &PoolState,
    class: usize,
    z: &[f64],
) -> Result<f64> {
    let k = pool.num_classes();
    if class >= k {
        return Err(Error::UnknownClass {
            class,
            num_classes: k,
        });
    }
    if z.len() != features.dim() {
        return Err(Error::ShapeMismatch(format!(
            "candidate has dimension {}, features have {}",
            z.len(),
            features.dim()
        )));
    }
    let mut sums = vec![vec![0.0; features.dim()]; k];
    let mut counts = vec![0usize; k];
    for c in 0..k {
        for &id in pool.labeled(c) {
            let row = features.get(id)?;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
            counts[c] += 1;
        }
    }
    let means = |sums: &[Vec<f64>], counts: &[usize]| -> Vec<(usize, Vec<f64>)> {
        (0..k)
            .filter(|&c| counts[c] > 0)
            .map(|c| (c, sums[c].iter().map(|s| s / counts[c] as f64).collect()))
            .collect()
    };
    let before = means(&sums, &counts);
    for (s, v) in sums[class].iter_mut().zip(z) {
        *s += v;
    }
    counts[class] += 1;
    let after = means(&sums, &counts);
    if after.len() < 2 {
        return Err(Error::TooFewClasses {
            present: after.len(),
        });
    }
    Ok(pair_cosine_total(&after)? - pair_cosine_total(&before)?)
}

/// `CMA · K'(K'−1)/2`, evaluated from the CMA definition over ordered pairs.
fn pair_cosine_total(means: &[(usize, Vec<f64>)]) -> Result<f64> {
    let k = means.len();
    if k < 2 {
        return Ok(0.0);
    }
    let norms: Vec<f64> = means
        .iter()
        .map(|(c, m)| {
            let n = linalg::norm(m);
            if n < linalg::NORM_EPS {
                Err(Error::ZeroNormMean { class: *c })
            } else {
                Ok(n)
            }
        })
        .collect::<Result<_>>()?;
    let mut ordered = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                ordered += dot(&means[i].1, &means[j].1) / (norms[i] * norms[j]);
            }
        }
    }
    let cma = ordered / (k * (k - 1)) as f64;
    Ok(cma * (k * (k - 1)) as f64 / 2.0)
}

fn check_class_and_point(stats: &ClassStats, class: usize, z: &[f64]) -> Result<()> {
    if class >= stats.num_classes() {
        return Err(Error::UnknownClass {
            class,
            num_classes: stats.num_classes(),
        });
    }
    if z.len() != stats.dim() {
        return Err(Error::ShapeMismatch(format!(
            "candidate has dimension {}, class means have {}",
            z.len(),
            stats.dim()
        )));
    }
    if !linalg::all_finite(z) {
        return Err(Error::NonFiniteInput("candidate feature".into()));
    }
    Ok(())
}

/// Number of prediction changes between consecutive checkpoints.
pub fn feature_fluctuation(preds: &CheckpointPredictions, id: SampleId) -> Result<u32> {
    let seq = preds.get(id).ok_or(Error::MissingSample(id))?;
    flip_count(seq)
}

pub fn flip_count(seq: &[usize]) -> Result<u32> {
    if seq.len() < 2 {
        return Err(Error::TooFewCheckpoints { found: seq.len() });
    }
    Ok(seq.windows(2).filter(|w| w[0] != w[1]).count() as u32)
}

/// Z-score with population standard deviation; constant inputs map to zeros.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !linalg::all_finite(values) {
        return Err(Error::NonFiniteInput("z-score input".into()));
    }
    let (mean, std) = linalg::mean_std(values);
    if std < linalg::NORM_EPS {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Scores every unlabeled candidate and ranks them by the fused score.
///
/// `predicted` supplies the class each candidate is hypothetically added
/// to. Per-candidate work runs on the ambient rayon pool; results are
/// assembled in id order, so output does not depend on the thread count.
pub fn score_candidates(
    features: &FeatureMatrix,
    pool: &PoolState,
    stats: &ClassStats,
    preds: &CheckpointPredictions,
    predicted: &BTreeMap<SampleId, usize>,
) -> Result<AcquisitionResult> {
    let ids: Vec<SampleId> = pool.unlabeled().iter().copied().collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw: Vec<(SampleId, usize, f64, u32)> = ids
        .par_iter()
        .map(|&id| {
            let scored = || -> Result<_> {
                let class = *predicted.get(&id).ok_or(Error::MissingSample(id))?;
                let z = features.get(id)?;
                let cmap = cmap_closed_form(stats, class, z)?;
                let ff = feature_fluctuation(preds, id)?;
                Ok((id, class, cmap, ff))
            };
            scored().map_err(|e| e.for_candidate(id))
        })
        .collect::<Result<_>>()?;

    let cmap_raw: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let ff_raw: Vec<f64> = raw.iter().map(|r| r.3 as f64).collect();
    let cmap_std = zscore(&cmap_raw)?;
    let ff_std = zscore(&ff_raw)?;

    let candidates = raw
        .iter()
        .enumerate()
        .map(|(i, &(id, predicted_class, cmap_raw, ff_raw))| CandidateScore {
            id,
            predicted_class,
            cmap_raw,
            ff_raw,
            cmap_std: cmap_std[i],
            ff_std: ff_std[i],
            score: (cmap_std[i] + ff_std[i]) / 2.0,
            rank: 0,
            selected: false,
        })
        .collect();
    let mut result = AcquisitionResult { candidates };
    result.rerank();
    Ok(result)
}

/// Marks and returns the `k` best-ranked candidates, best first.
pub fn select_top_k(result: &mut AcquisitionResult, k: usize) -> Result<Vec<SampleId>> {
    let n = result.candidates.len();
    if k == 0 || k > n {
        return Err(Error::BudgetExceedsPool { k, pool: n });
    }
    result.rerank();
    for c in &mut result.candidates {
        c.selected = c.rank < k;
    }
    Ok(result.selected_ids())
}

/// Builds checkpoint predictions for `ids` from a per-epoch prediction table
/// restricted to the window `[start, end]`.
pub fn window_predictions(
    epoch_predictions: &[Vec<usize>],
    ids: &[SampleId],
    start: usize,
    end: usize,
) -> Result<CheckpointPredictions> {
    if end >= epoch_predictions.len() || start > end {
        return Err(Error::InvalidSpec(format!(
            "checkpoint window [{start}, {end}] outside {} epochs",
            epoch_predictions.len()
        )));
    }
    let epochs: Vec<usize> = (start..=end).collect();
    let predictions = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, epochs.iter().map(|&e| epoch_predictions[e][i]).collect()))
        .collect();
    CheckpointPredictions::new(epochs, predictions)
}
