//! Embeddings, the labeled/unlabeled partition, and per-class statistics.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::linalg;

pub type SampleId = u64;

/// Dense `n_samples × dim` matrix of embedding rows keyed by sample id.
///
/// Values are held in f64 regardless of how they were stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<SampleId>,
    index: HashMap<SampleId, usize>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<SampleId>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "feature row {}, column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            index,
        })
    }

    pub fn from_rows(ids: Vec<SampleId>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: SampleId) -> Result<&[f64]> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or(Error::MissingSample(id))
    }

    pub fn rows(&self) -> impl Iterator<Item = (SampleId, &[f64])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    /// Every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.dim,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Partition of the sample universe into per-class labeled sets and the
/// unlabeled remainder at a given acquisition cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labeled: Vec<BTreeSet<SampleId>>,
    unlabeled: BTreeSet<SampleId>,
    pub cycle: usize,
}

impl PoolState {
    /// Every id in `universe` starts unlabeled.
    pub fn new(universe: impl IntoIterator<Item = SampleId>, num_classes: usize) -> Self {
        Self {
            labeled: vec![BTreeSet::new(); num_classes],
            unlabeled: universe.into_iter().collect(),
            cycle: 0,
        }
    }

    /// Pool with the given `(id, class)` pairs labeled and everything else
    /// in `universe` unlabeled.
    pub fn with_labels(
        universe: impl IntoIterator<Item = SampleId>,
        num_classes: usize,
        labels: impl IntoIterator<Item = (SampleId, usize)>,
    ) -> Result<Self> {
        let mut pool = Self::new(universe, num_classes);
        for (id, class) in labels {
            pool.apply_label(id, class)?;
        }
        Ok(pool)
    }

    pub fn num_classes(&self) -> usize {
        self.labeled.len()
    }

    pub fn labeled(&self, class: usize) -> &BTreeSet<SampleId> {
        &self.labeled[class]
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.iter().map(BTreeSet::len).sum()
    }

    /// All labeled `(id, class)` pairs in ascending class, then id order.
    pub fn labeled_pairs(&self) -> Vec<(SampleId, usize)> {
        self.labeled
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |&id| (id, c)))
            .collect()
    }

    pub fn label_of(&self, id: SampleId) -> Option<usize> {
        self.labeled.iter().position(|s| s.contains(&id))
    }

    /// Moves `id` from the unlabeled set into `labeled[class]`.
    pub fn apply_label(&mut self, id: SampleId, class: usize) -> Result<()> {
        if class >= self.labeled.len() {
            return Err(Error::UnknownClass {
                class,
                num_classes: self.labeled.len(),
            });
        }
        if !self.unlabeled.remove(&id) {
            return Err(if self.label_of(id).is_some() {
                Error::AlreadyLabeled(id)
            } else {
                Error::UnknownSample(id)
            });
        }
        self.labeled[class].insert(id);
        Ok(())
    }

    /// Checks disjointness of all sets and that they cover `universe` exactly.
    pub fn check_partition(&self, universe: &BTreeSet<SampleId>) -> bool {
        let mut seen = BTreeSet::new();
        for set in self.labeled.iter().chain(std::iter::once(&self.unlabeled)) {
            for &id in set {
                if !seen.insert(id) {
                    return false;
                }
            }
        }
        &seen == universe
    }
}

/// Per-class counts, means, unit means, and their sum `M`.
///
/// Absent classes (no labeled samples) keep zero vectors in `means` and
/// `unit_means` and are excluded from `m_sum`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub unit_means: Vec<Vec<f64>>,
    pub m_sum: Vec<f64>,
    pub present_classes: BTreeSet<usize>,
}

impl ClassStats {
    /// Builds stats from per-class counts and means.
    pub fn from_means(counts: Vec<usize>, means: Vec<Vec<f64>>) -> Result<Self> {
        if counts.len() != means.len() {
            return Err(Error::ShapeMismatch(
                "counts and means differ in length".into(),
            ));
        }
        let dim = means.first().map_or(0, Vec::len);
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::ShapeMismatch("ragged class means".into()));
        }
        let mut unit_means = vec![vec![0.0; dim]; means.len()];
        let mut m_sum = vec![0.0; dim];
        let mut present_classes = BTreeSet::new();
        for (c, (&n, mean)) in counts.iter().zip(&means).enumerate() {
            if n == 0 {
                continue;
            }
            if !linalg::all_finite(mean) {
                return Err(Error::NonFiniteInput(format!("class {c} mean")));
            }
            let unit = linalg::normalized(mean).ok_or(Error::ZeroNormMean { class: c })?;
            linalg::add_assign(&mut m_sum, &unit);
            unit_means[c] = unit;
            present_classes.insert(c);
        }
        Ok(Self {
            counts,
            means,
            unit_means,
            m_sum,
            present_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.m_sum.len()
    }

    pub fn num_present(&self) -> usize {
        self.present_classes.len()
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.present_classes.contains(&class)
    }

    /// Stats after adding one sample `z` to `class`, via the running-mean update.
    pub fn with_sample(&self, class: usize, z: &[f64]) -> Result<Self> {
        if class >= self.num_classes() {
            return Err(Error::UnknownClass {
                class,
                num_classes: self.num_classes(),
            });
        }
        let n = self.counts[class] as f64;
        let mut counts = self.counts.clone();
        let mut means = self.means.clone();
        means[class] = self.means[class]
            .iter()
            .zip(z)
            .map(|(m, x)| (n * m + x) / (n + 1.0))
            .collect();
        counts[class] += 1;
        Self::from_means(counts, means)
    }
}

/// Per-class statistics of the labeled set, recomputed from scratch.
pub fn compute_class_stats(features: &FeatureMatrix, pool: &PoolState) -> Result<ClassStats> {
    let dim = features.dim();
    let k = pool.num_classes();
    let mut counts = vec![0usize; k];
    let mut means = vec![vec![0.0; dim]; k];
    for (c, ids) in pool.labeled.iter().enumerate() {
        for &id in ids {
            linalg::add_assign(&mut means[c], features.get(id)?);
        }
        counts[c] = ids.len();
        if counts[c] > 0 {
            let n = counts[c] as f64;
            means[c].iter_mut().for_each(|v| *v /= n);
        }
    }
    ClassStats::from_means(counts, means)
}

/// Mean of all labeled feature vectors.
pub fn labeled_global_mean(features: &FeatureMatrix, pool: &PoolState) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; features.dim()];
    let mut n = 0usize;
    for (id, _) in pool.labeled_pairs() {
        linalg::add_assign(&mut acc, features.get(id)?);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}
