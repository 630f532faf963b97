//! Neural-collapse diagnostics over labeled features.
//!
//! * within/between variability ratio (features collapsing onto class means)
//! * pairwise cosines of globally-centered class means against the simplex
//!   target `−1/(K'−1)`
//! * agreement between model predictions and nearest-class-mean predictions
//! * Euclidean distances between raw class means

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pool::{compute_class_stats, labeled_global_mean, ClassStats, FeatureMatrix, PoolState, SampleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub nc1_ratio: f64,
    pub nc2_cos_mean: f64,
    pub nc2_cos_std: f64,
    pub nc2_target: f64,
    pub nc4_agreement: f64,
    pub interclass_dist_mean: f64,
    pub interclass_dist_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtfDeviation {
    pub cos_mean: f64,
    pub cos_std: f64,
    pub target: f64,
}

/// `Tr(Σ_W) / Tr(Σ_B)` over the labeled samples.
pub fn nc1_variability(features: &FeatureMatrix, pool: &PoolState) -> Result<f64> {
    let (counts, means) = raw_class_means(features, pool)?;
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::TooFewClasses {
            present: present.len(),
        });
    }
    let global = labeled_global_mean(features, pool)?;
    let n: usize = counts.iter().sum();

    let mut within = 0.0;
    for (id, c) in pool.labeled_pairs() {
        within += linalg::sq_dist(features.get(id)?, &means[c]);
    }
    within /= n as f64;

    let between = present
        .iter()
        .map(|&c| linalg::sq_dist(&means[c], &global))
        .sum::<f64>()
        / present.len() as f64;
    if between < linalg::NORM_EPS {
        return Err(Error::DegenerateBetween);
    }
    Ok(within / between)
}

/// Pairwise cosine statistics of class means centered on `global_mean`.
pub fn nc2_etf_deviation(stats: &ClassStats, global_mean: &[f64]) -> Result<EtfDeviation> {
    let present: Vec<usize> = stats.present_classes.iter().copied().collect();
    let k = present.len();
    if k < 2 {
        return Err(Error::TooFewClasses { present: k });
    }
    let centered: Vec<Vec<f64>> = present
        .iter()
        .map(|&c| {
            linalg::normalized(&linalg::sub(&stats.means[c], global_mean))
                .ok_or(Error::ZeroNormMean { class: c })
        })
        .collect::<Result<_>>()?;
    let mut cosines = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            cosines.push(linalg::dot(&centered[i], &centered[j]));
        }
    }
    let (cos_mean, cos_std) = linalg::mean_std(&cosines);
    Ok(EtfDeviation {
        cos_mean,
        cos_std,
        target: -1.0 / (k as f64 - 1.0),
    })
}

/// Fraction of `predictions` that agree with the nearest class mean
/// (ties go to the lower class index).
pub fn nc4_nearest_mean_agreement(
    features: &FeatureMatrix,
    pool: &PoolState,
    predictions: &BTreeMap<SampleId, usize>,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (counts, means) = raw_class_means(features, pool)?;
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if present.is_empty() {
        return Err(Error::TooFewClasses { present: 0 });
    }
    let mut agree = 0usize;
    for (&id, &pred) in predictions {
        let z = features.get(id)?;
        if nearest_mean(z, &present, &means) == pred {
            agree += 1;
        }
    }
    Ok(agree as f64 / predictions.len() as f64)
}

pub(crate) fn nearest_mean(z: &[f64], present: &[usize], means: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &c in present {
        let d = linalg::sq_dist(z, &means[c]);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Pairwise distances between raw class means (`i < j` order) and their mean.
pub fn interclass_distances(stats: &ClassStats) -> Result<(f64, Vec<f64>)> {
    let present: Vec<usize> = stats.present_classes.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::TooFewClasses {
            present: present.len(),
        });
    }
    let mut values = Vec::new();
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            values.push(linalg::dist(&stats.means[i], &stats.means[j]));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean, values))
}

/// All diagnostics for the labeled part of `pool`.
pub fn collapse_report(
    features: &FeatureMatrix,
    pool: &PoolState,
    predictions: &BTreeMap<SampleId, usize>,
) -> Result<CollapseReport> {
    let stats = compute_class_stats(features, pool)?;
    let global = labeled_global_mean(features, pool)?;
    let nc1_ratio = nc1_variability(features, pool)?;
    let etf = nc2_etf_deviation(&stats, &global)?;
    let nc4_agreement = nc4_nearest_mean_agreement(features, pool, predictions)?;
    let (interclass_dist_mean, interclass_dist_values) = interclass_distances(&stats)?;
    Ok(CollapseReport {
        nc1_ratio,
        nc2_cos_mean: etf.cos_mean,
        nc2_cos_std: etf.cos_std,
        nc2_target: etf.target,
        nc4_agreement,
        interclass_dist_mean,
        interclass_dist_values,
    })
}

fn raw_class_means(features: &FeatureMatrix, pool: &PoolState) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let k = pool.num_classes();
    let mut counts = vec![0usize; k];
    let mut means = vec![vec![0.0; features.dim()]; k];
    for (id, c) in pool.labeled_pairs() {
        linalg::add_assign(&mut means[c], features.get(id)?);
        counts[c] += 1;
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        if n > 0 {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok((counts, means))
}
