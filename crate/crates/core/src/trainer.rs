//! One-hidden-layer ReLU classifier trained with mini-batch SGD on
//! synthetic Gaussian blobs.
//!
//! The hidden activations are the penultimate features consumed by the
//! acquisition and collapse code. Training records a prediction for every
//! tracked sample after every epoch so the terminal-phase window can be cut
//! out afterwards.

use rand::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{FeatureMatrix, SampleId};

/// Parameters of a Gaussian blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub counts: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn balanced(num_classes: usize, per_class: usize, dim: usize, separation: f64, stddev: f64, seed: u64) -> Self {
        Self {
            counts: vec![per_class; num_classes],
            dim,
            separation,
            stddev,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: FeatureMatrix,
    /// True class of each row, aligned with `features.ids()`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl SyntheticDataset {
    pub fn label_of(&self, id: SampleId) -> Option<usize> {
        self.features.position(id).map(|i| self.labels[i])
    }

    /// Random split into `(kept, held_out)` with `round(fraction·N)` rows
    /// held out. Ids are preserved.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidSpec(format!("holdout fraction {fraction} outside [0, 1)")));
        }
        let n = self.features.n_samples();
        let n_out = (fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (mut out, mut kept) = (order[..n_out].to_vec(), order[n_out..].to_vec());
        out.sort_unstable();
        kept.sort_unstable();
        Ok((self.subset(&kept)?, self.subset(&out)?))
    }

    /// Rows at the given positions, in that order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let dim = self.features.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        let ids = rows.iter().map(|&r| self.features.ids()[r]).collect();
        Ok(Self {
            features: FeatureMatrix::new(ids, dim, data)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        })
    }
}

/// Class centers sit at `separation · e_c` when there are at most `dim`
/// classes; otherwise at seeded random directions on the sphere of radius
/// `separation`. Ids run `0..N` in class order.
pub fn generate_blobs(spec: &BlobSpec) -> Result<SyntheticDataset> {
    let k = spec.num_classes();
    if k < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 classes, got {k}")));
    }
    if spec.counts.contains(&0) {
        return Err(Error::InvalidSpec("every class needs at least one sample".into()));
    }
    if spec.dim == 0 || !(spec.separation > 0.0) || !(spec.stddev >= 0.0) || !spec.separation.is_finite() || !spec.stddev.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "dim {} separation {} stddev {}",
            spec.dim, spec.separation, spec.stddev
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = if k <= spec.dim {
        (0..k)
            .map(|c| (0..spec.dim).map(|j| if j == c { spec.separation } else { 0.0 }).collect())
            .collect()
    } else {
        (0..k)
            .map(|_| loop {
                let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                if let Some(u) = crate::linalg::normalized(&v) {
                    break u.into_iter().map(|x| x * spec.separation).collect();
                }
            })
            .collect()
    };
    let noise = Normal::new(0.0, spec.stddev).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let n: usize = spec.counts.iter().sum();
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            data.extend(centers[c].iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Ok(SyntheticDataset {
        features: FeatureMatrix::new((0..n as u64).collect(), spec.dim, data)?,
        labels,
        num_classes: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 penalty on weight matrices, applied in the update step.
    pub weight_decay: f64,
    pub tpt_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 200,
            weight_decay: 5e-3,
            tpt_threshold: 0.995,
            seed: 0,
        }
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// `input → ReLU(W1·x + b1) → W2·h + b2 → softmax`.
///
/// Parameters flatten as `[W1 (hidden×input, row-major), b1, W2
/// (classes×hidden), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    input: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

impl ToyModel {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(hidden * input + hidden + classes * hidden + classes);
        let b1 = 1.0 / (input as f64).sqrt();
        params.extend((0..hidden * input + hidden).map(|_| rng.random_range(-b1..b1)));
        let b2 = 1.0 / (hidden as f64).sqrt();
        params.extend((0..classes * hidden + classes).map(|_| rng.random_range(-b2..b2)));
        Self {
            input,
            hidden,
            classes,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn is_weight(&self, i: usize) -> bool {
        let (w1, b1, w2) = self.offsets();
        i < w1 || (b1..w2).contains(&i)
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.input);
        let (o_w1, o_b1, o_w2) = self.offsets();
        let (w1, b1) = (&self.params[..o_w1], &self.params[o_w1..o_b1]);
        let (w2, b2) = (&self.params[o_b1..o_w2], &self.params[o_w2..]);
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| b1[h] + crate::linalg::dot(&w1[h * self.input..(h + 1) * self.input], x))
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| b2[c] + crate::linalg::dot(&w2[c * self.hidden..(c + 1) * self.hidden], &hidden))
            .collect();
        let probs = softmax(&logits);
        Forward {
            pre,
            hidden,
            logits,
            probs,
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x).logits)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// the flattened parameters.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
        let (o_w1, o_b1, o_w2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / xs.len() as f64;
        let w2 = &self.params[o_b1..o_w2];
        let mut dhidden = vec![0.0; self.hidden];
        for (x, &y) in xs.iter().zip(ys) {
            let f = self.forward(x);
            loss -= f.probs[y].max(f64::MIN_POSITIVE).ln();
            dhidden.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..self.classes {
                let dl = (f.probs[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                let row = &mut grad[o_b1 + c * self.hidden..o_b1 + (c + 1) * self.hidden];
                for (g, h) in row.iter_mut().zip(&f.hidden) {
                    *g += dl * h;
                }
                grad[o_w2 + c] += dl;
                for (dh, w) in dhidden.iter_mut().zip(&w2[c * self.hidden..(c + 1) * self.hidden]) {
                    *dh += dl * w;
                }
            }
            for h in 0..self.hidden {
                if f.pre[h] <= 0.0 {
                    continue;
                }
                let d = dhidden[h];
                let row = &mut grad[h * self.input..(h + 1) * self.input];
                for (g, xi) in row.iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
                grad[o_w1 + h] += d;
            }
        }
        (loss * scale, grad)
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| -self.forward(x).probs[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / xs.len() as f64
    }

    fn sgd_step(&mut self, grad: &[f64], lr: f64, weight_decay: f64) {
        for i in 0..self.params.len() {
            let decay = if self.is_weight(i) { weight_decay * self.params[i] } else { 0.0 };
            self.params[i] -= lr * (grad[i] + decay);
        }
    }

    /// Hidden activations for every row of `features`.
    pub fn embed(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(features.n_samples() * self.hidden);
        for (_, x) in features.rows() {
            data.extend(self.forward(x).hidden);
        }
        FeatureMatrix::new(features.ids().to_vec(), self.hidden, data)
    }

    /// Trains in place for `cfg.epochs` epochs on `labeled`, recording the
    /// prediction for each `tracked` id after every epoch.
    pub fn train(
        &mut self,
        cfg: &TrainConfig,
        features: &FeatureMatrix,
        labeled: &[(SampleId, usize)],
        tracked: &[SampleId],
    ) -> Result<TrainingTrace> {
        let classes: std::collections::BTreeSet<usize> = labeled.iter().map(|l| l.1).collect();
        if classes.len() < 2 {
            return Err(Error::TooFewClasses {
                present: classes.len(),
            });
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::InvalidSpec("epochs and batch size must be positive".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.classes) {
            return Err(Error::UnknownClass {
                class: c,
                num_classes: self.classes,
            });
        }
        let rows: Vec<(&[f64], usize)> = labeled
            .iter()
            .map(|&(id, y)| features.get(id).map(|x| (x, y)))
            .collect::<Result<_>>()?;
        let tracked_rows: Vec<&[f64]> = tracked.iter().map(|&id| features.get(id)).collect::<Result<_>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut train_accuracy = Vec::with_capacity(cfg.epochs);
        let mut train_loss = Vec::with_capacity(cfg.epochs);
        let mut epoch_predictions = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let xs: Vec<&[f64]> = batch.iter().map(|&i| rows[i].0).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| rows[i].1).collect();
                let (loss, grad) = self.loss_and_grad(&xs, &ys);
                if !loss.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                epoch_loss += loss * batch.len() as f64;
                self.sgd_step(&grad, cfg.learning_rate, cfg.weight_decay);
            }
            if !self.params.iter().all(|p| p.is_finite()) {
                return Err(Error::DivergedTraining { epoch });
            }
            train_loss.push(epoch_loss / rows.len() as f64);
            let correct = rows.iter().filter(|(x, y)| self.predict(x) == *y).count();
            train_accuracy.push(correct as f64 / rows.len() as f64);
            epoch_predictions.push(tracked_rows.iter().map(|x| self.predict(x)).collect());
        }
        let (tpt_start, tpt_end) = detect_tpt(&train_accuracy, cfg.tpt_threshold);
        Ok(TrainingTrace {
            train_accuracy,
            train_loss,
            tracked: tracked.to_vec(),
            epoch_predictions,
            tpt_start,
            tpt_end,
        })
    }
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub train_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub tracked: Vec<SampleId>,
    /// `epoch_predictions[e][i]` is the prediction for `tracked[i]` after epoch `e`.
    pub epoch_predictions: Vec<Vec<usize>>,
    pub tpt_start: usize,
    pub tpt_end: usize,
}

impl TrainingTrace {
    /// Terminal-phase window widened to at least two checkpoints when the
    /// run has two or more epochs.
    pub fn checkpoint_window(&self) -> (usize, usize) {
        let start = if self.tpt_end > 0 && self.tpt_start == self.tpt_end {
            self.tpt_end - 1
        } else {
            self.tpt_start
        };
        (start, self.tpt_end)
    }
}

/// Terminal-phase bounds: the first epoch whose training accuracy reaches
/// `threshold` through the last epoch. When the threshold is never reached
/// the window is the last `⌈20%⌉` of epochs.
pub fn detect_tpt(accuracy: &[f64], threshold: f64) -> (usize, usize) {
    let n = accuracy.len();
    if n == 0 {
        return (0, 0);
    }
    let end = n - 1;
    match accuracy.iter().position(|&a| a >= threshold) {
        Some(start) => (start, end),
        None => (n - (n as f64 * 0.2).ceil() as usize, end),
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
