//! Python bindings for `ncal-core`.
//!
//! Structured results (score tables, collapse reports, simulation runs) are
//! returned as plain dicts and lists decoded from their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ncal_core::acquisition::{self, CheckpointPredictions};
use ncal_core::al_loop::{self, ProtocolConfig, Strategy};
use ncal_core::trainer::{self, BlobSpec};
use ncal_core::{collapse, compute_class_stats, io, Error, FeatureMatrix, PoolState, SampleId};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ncal, NcalError, PyValueError, "Invalid input or inconsistent pool state.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => NcalError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| NcalError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Unlabeled/labeled pool over a fixed feature matrix.
///
/// `Pool(ids, features, num_classes, labels=None)` where `features` is a list
/// of equal-length rows and `labels` maps sample id to class.
#[pyclass(module = "ncal")]
struct Pool {
    features: FeatureMatrix,
    state: PoolState,
}

#[pymethods]
impl Pool {
    #[new]
    #[pyo3(signature = (ids, features, num_classes, labels = None))]
    fn new(
        ids: Vec<SampleId>,
        features: Vec<Vec<f64>>,
        num_classes: usize,
        labels: Option<BTreeMap<SampleId, usize>>,
    ) -> PyResult<Self> {
        let matrix = FeatureMatrix::from_rows(ids, &features).map_err(py_err)?;
        let state = PoolState::with_labels(matrix.ids().iter().copied(), num_classes, labels.unwrap_or_default())
            .map_err(py_err)?;
        Ok(Self { features: matrix, state })
    }

    /// Reads a binary feature dump and its `.idx` companion.
    #[staticmethod]
    #[pyo3(signature = (path, num_classes = None))]
    fn load(path: PathBuf, num_classes: Option<usize>) -> PyResult<Self> {
        let dump = io::read_feature_dump(&path).map_err(py_err)?;
        let labeled: Vec<(SampleId, usize)> = dump
            .features
            .ids()
            .iter()
            .zip(&dump.labels)
            .filter_map(|(&id, l)| l.map(|l| (id, l)))
            .collect();
        let k = num_classes.unwrap_or_else(|| labeled.iter().map(|l| l.1 + 1).max().unwrap_or(0));
        let state = PoolState::with_labels(dump.features.ids().iter().copied(), k, labeled).map_err(py_err)?;
        Ok(Self {
            features: dump.features,
            state,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let labels: Vec<Option<usize>> = self.features.ids().iter().map(|&id| self.state.label_of(id)).collect();
        io::write_feature_dump(&path, &self.features, &labels).map_err(py_err)
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.features.n_samples()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.features.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.state.num_classes()
    }

    fn ids(&self) -> Vec<SampleId> {
        self.features.ids().to_vec()
    }

    fn row(&self, id: SampleId) -> PyResult<Vec<f64>> {
        self.features.get(id).map(<[f64]>::to_vec).map_err(py_err)
    }

    /// `(id, class)` pairs in ascending id order.
    fn labeled(&self) -> Vec<(SampleId, usize)> {
        self.state.labeled_pairs()
    }

    fn unlabeled(&self) -> Vec<SampleId> {
        self.state.unlabeled().iter().copied().collect()
    }

    /// Moves an unlabeled sample into `class`.
    fn label(&mut self, id: SampleId, class: usize) -> PyResult<()> {
        self.state.apply_label(id, class).map_err(py_err)
    }

    /// Copy with every feature multiplied by `factor`.
    fn scaled(&self, factor: f64) -> PyResult<Self> {
        Ok(Self {
            features: self.features.scaled(factor).map_err(py_err)?,
            state: self.state.clone(),
        })
    }

    /// Mean pairwise cosine of the present class means.
    fn cma(&self) -> PyResult<f64> {
        let stats = compute_class_stats(&self.features, &self.state).map_err(py_err)?;
        acquisition::cma(&stats).map_err(py_err)
    }

    /// Perturbation score of adding `z` to `class` (incremental form).
    fn cmap(&self, class: usize, z: Vec<f64>) -> PyResult<f64> {
        let stats = compute_class_stats(&self.features, &self.state).map_err(py_err)?;
        acquisition::cmap_closed_form(&stats, class, &z).map_err(py_err)
    }

    /// Same quantity as `cmap`, recomputed from all class means.
    fn cmap_bruteforce(&self, class: usize, z: Vec<f64>) -> PyResult<f64> {
        acquisition::cmap_bruteforce(&self.features, &self.state, class, &z).map_err(py_err)
    }

    /// Scores every unlabeled sample from per-checkpoint predictions
    /// (`{id: [class at epochs[0], class at epochs[1], ...]}`). Candidates
    /// are hypothetically added to their last predicted class. Returns one
    /// dict per candidate in id order; with `k`, the best `k` are marked
    /// `selected`.
    #[pyo3(signature = (epochs, predictions, k = None))]
    fn score<'py>(
        &self,
        py: Python<'py>,
        epochs: Vec<usize>,
        predictions: BTreeMap<SampleId, Vec<usize>>,
        k: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let preds = CheckpointPredictions::new(epochs, predictions).map_err(py_err)?;
        let stats = compute_class_stats(&self.features, &self.state).map_err(py_err)?;
        let mut result =
            acquisition::score_candidates(&self.features, &self.state, &stats, &preds, &preds.final_predictions())
                .map_err(py_err)?;
        if let Some(k) = k {
            acquisition::select_top_k(&mut result, k).map_err(py_err)?;
        }
        to_py(py, &result.candidates)
    }

    /// NC1/NC2/NC4 and inter-class distances over the labeled samples.
    /// `predictions` maps labeled ids to model predictions for the
    /// nearest-mean agreement; labels are used when omitted.
    #[pyo3(signature = (predictions = None))]
    fn collapse_report<'py>(
        &self,
        py: Python<'py>,
        predictions: Option<BTreeMap<SampleId, usize>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let preds = predictions.unwrap_or_else(|| self.state.labeled_pairs().into_iter().collect());
        let report = collapse::collapse_report(&self.features, &self.state, &preds).map_err(py_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pool(n_samples={}, dim={}, num_classes={}, labeled={})",
            self.features.n_samples(),
            self.features.dim(),
            self.state.num_classes(),
            self.state.num_labeled()
        )
    }
}

/// Number of label changes between consecutive checkpoints.
#[pyfunction]
fn flip_count(sequence: Vec<usize>) -> PyResult<u32> {
    acquisition::flip_count(&sequence).map_err(py_err)
}

/// Population z-scores; a constant input maps to zeros.
#[pyfunction]
fn zscore(values: Vec<f64>) -> PyResult<Vec<f64>> {
    acquisition::zscore(&values).map_err(py_err)
}

type Blobs = (Vec<SampleId>, Vec<Vec<f64>>, Vec<usize>);

/// Gaussian blobs; returns `(ids, rows, labels)`.
#[pyfunction]
#[pyo3(signature = (counts, dim, separation = 3.0, stddev = 1.0, seed = 0))]
fn generate_blobs(
    counts: Vec<usize>,
    dim: usize,
    separation: f64,
    stddev: f64,
    seed: u64,
) -> PyResult<Blobs> {
    let ds = trainer::generate_blobs(&BlobSpec {
        counts,
        dim,
        separation,
        stddev,
        seed,
    })
    .map_err(py_err)?;
    let rows = ds.features.rows().map(|(_, r)| r.to_vec()).collect();
    Ok((ds.features.ids().to_vec(), rows, ds.labels))
}

/// Per-class sizes `max(1, round(n_max·exp(-beta·c)))`.
#[pyfunction]
fn longtail_counts(n_max: usize, num_classes: usize, beta: f64) -> Vec<usize> {
    al_loop::longtail_counts(n_max, num_classes, beta)
}

/// Default simulation config as a JSON string.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ProtocolConfig::default()).map_err(|e| NcalError::new_err(e.to_string()))
}

/// Runs the active-learning protocol. `config` is a JSON string (defaults
/// when omitted); returns `{"runs": [...], "summary": [...]}`.
#[pyfunction]
#[pyo3(signature = (config = None, strategies = None, seed = None))]
fn simulate<'py>(
    py: Python<'py>,
    config: Option<&str>,
    strategies: Option<Vec<String>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg: ProtocolConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| NcalError::new_err(e.to_string()))?,
        None => ProtocolConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let strategies: Vec<Strategy> = match strategies {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Strategy>())
            .collect::<Result<_, _>>()
            .map_err(py_err)?,
        None => vec![cfg.strategy],
    };
    let runs = py.detach(|| al_loop::run_experiment(&cfg, &strategies)).map_err(py_err)?;
    #[derive(Serialize)]
    struct Output<'a> {
        runs: &'a [al_loop::RunResult],
        summary: Vec<al_loop::StrategySummary>,
    }
    to_py(
        py,
        &Output {
            runs: &runs,
            summary: al_loop::summarize(&runs),
        },
    )
}

#[pymodule]
fn ncal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NcalError", m.py().get_type::<NcalError>())?;
    m.add_class::<Pool>()?;
    m.add_function(wrap_pyfunction!(flip_count, m)?)?;
    m.add_function(wrap_pyfunction!(zscore, m)?)?;
    m.add_function(wrap_pyfunction!(generate_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(longtail_counts, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
