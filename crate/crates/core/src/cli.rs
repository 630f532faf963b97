//! `ncal` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acquisition::{cma, score_candidates, select_top_k};
use crate::al_loop::{self, run_experiment, summarize, ProtocolConfig, Strategy};
use crate::collapse::collapse_report;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg;
use crate::pool::{compute_class_stats, PoolState, SampleId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ncal", version, about = "Neural-collapse guided active-learning acquisition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output path (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel scoring and simulation
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score unlabeled candidates and write a selection report
    Score {
        /// Binary feature dump (index read from <FEATURES>.idx)
        features: PathBuf,
        /// Prediction log over the terminal-phase checkpoints
        predictions: PathBuf,
        /// `sample_id,class` table of labeled samples
        labeled: PathBuf,
        /// Mark the k best candidates as selected
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the top-k candidate ids from a selection report
    Select {
        report: PathBuf,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the active-learning protocol on synthetic blobs
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run a single seed instead of the configured list
        #[arg(long)]
        seed: Option<u64>,
        /// ncal, random, coreset, or all
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Collapse diagnostics for the labeled rows of a feature dump
    Collapse {
        features: PathBuf,
        /// Prediction log; the last checkpoint is compared with nearest-mean
        /// assignments (labels are used when omitted)
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Long-tail subsample of a labeled index (or a synthetic one)
    Longtail {
        /// Index file (`sample_id,label` lines); classes are taken in
        /// ascending label order
        index: Option<PathBuf>,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-class size of the synthetic pool when no index is given
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Score { common, .. }
            | Command::Select { common, .. }
            | Command::Simulate { common, .. }
            | Command::Collapse { common, .. }
            | Command::Longtail { common, .. } => common,
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let threads = cli.command.common().threads;
    let mut buffer: Vec<u8> = Vec::new();
    let outcome = match threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &mut buffer)),
            Err(e) => Err(Failure::Usage(format!("--threads: {e}"))),
        },
        None => dispatch(&cli.command, &mut buffer),
    };
    if let Err(e) = stdout.write_all(&buffer) {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_DATA;
    }
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cmd: &Command, stdout: &mut Vec<u8>) -> Result<(), Failure> {
    match cmd {
        Command::Score {
            features,
            predictions,
            labeled,
            k,
            common,
        } => {
            let report = score_files(features, predictions, labeled, *k, common.threads)?;
            emit(common.out.as_deref(), &io::encode_report(&report)?, stdout)
        }
        Command::Select { report, k, common } => {
            let mut report = io::read_report(report)?;
            let ids = select_top_k(&mut report.candidates, *k)?;
            let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
            emit(common.out.as_deref(), &text, stdout)
        }
        Command::Simulate {
            config,
            seed,
            strategy,
            common,
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_str::<ProtocolConfig>(&std::fs::read_to_string(path)?)
                    .map_err(Error::from)?,
                None => ProtocolConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![*s];
            }
            let strategies = match strategy.as_deref() {
                None => vec![cfg.strategy],
                Some("all") => Strategy::ALL.to_vec(),
                Some(name) => vec![name
                    .parse::<Strategy>()
                    .map_err(|_| Failure::Usage(format!("--strategy: unknown strategy {name:?}")))?],
            };
            cfg.validate()?;
            let runs = run_experiment(&cfg, &strategies)?;
            let mut records = String::new();
            for rec in runs.iter().flat_map(|r| &r.records) {
                records.push_str(&serde_json::to_string(rec).map_err(Error::from)?);
                records.push('\n');
            }
            let mut summary = serde_json::to_string_pretty(&summarize(&runs)).map_err(Error::from)?;
            summary.push('\n');
            match &common.out {
                Some(path) => {
                    std::fs::write(path, records)?;
                    stdout.write_all(summary.as_bytes())?;
                }
                None => {
                    stdout.write_all(records.as_bytes())?;
                    stdout.write_all(summary.as_bytes())?;
                }
            }
            Ok(())
        }
        Command::Collapse {
            features,
            predictions,
            common,
        } => {
            let dump = io::read_feature_dump(features)?;
            let labeled: Vec<(SampleId, usize)> = dump
                .features
                .ids()
                .iter()
                .zip(&dump.labels)
                .filter_map(|(&id, l)| l.map(|l| (id, l)))
                .collect();
            let k = labeled.iter().map(|l| l.1 + 1).max().unwrap_or(0);
            let pool = PoolState::with_labels(dump.features.ids().iter().copied(), k, labeled.iter().copied())?;
            let preds: BTreeMap<SampleId, usize> = match predictions {
                Some(p) => {
                    let log = io::read_predictions(p)?;
                    let finals = log.final_predictions();
                    labeled
                        .iter()
                        .filter_map(|(id, _)| finals.get(id).map(|&c| (*id, c)))
                        .collect()
                }
                None => labeled.iter().copied().collect(),
            };
            let report = collapse_report(&dump.features, &pool, &preds)?;
            let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            text.push('\n');
            emit(common.out.as_deref(), &text, stdout)
        }
        Command::Longtail {
            index,
            beta,
            seed,
            n_max,
            classes,
            common,
        } => {
            let by_class: Vec<Vec<SampleId>> = match (index, n_max, classes) {
                (Some(path), None, None) => {
                    let (ids, labels) = io::decode_index(&std::fs::read_to_string(path)?)?;
                    let k = labels.iter().flatten().map(|l| l + 1).max().unwrap_or(0);
                    let mut by = vec![Vec::new(); k];
                    for (id, l) in ids.into_iter().zip(labels) {
                        if let Some(l) = l {
                            by[l].push(id);
                        }
                    }
                    by
                }
                (None, Some(n), Some(k)) => (0..*k as u64)
                    .map(|c| (c * *n as u64..(c + 1) * *n as u64).collect())
                    .collect(),
                _ => {
                    return Err(Failure::Usage(
                        "longtail needs either an INDEX file or both --n-max and --classes".into(),
                    ))
                }
            };
            let tail = al_loop::make_longtail(&by_class, *beta, *seed)?;
            let pairs: Vec<(SampleId, usize)> = tail
                .ids
                .iter()
                .enumerate()
                .flat_map(|(c, ids)| ids.iter().map(move |&id| (id, c)))
                .collect();
            let ids: Vec<SampleId> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
            emit(common.out.as_deref(), &io::encode_index(&ids, &labels), stdout)
        }
    }
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut Vec<u8>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Scores the unlabeled rows of a feature dump; `k` marks the selection.
pub fn score_files(
    features: &Path,
    predictions: &Path,
    labeled: &Path,
    k: Option<usize>,
    threads: Option<usize>,
) -> Result<io::SelectionReport> {
    let dump = io::read_feature_dump(features)?;
    let preds = io::read_predictions(predictions)?;
    let labels = io::decode_labels(&std::fs::read_to_string(labeled)?)?;
    let finals = preds.final_predictions();
    let num_classes = labels
        .iter()
        .map(|l| l.1)
        .chain(finals.values().copied())
        .max()
        .map_or(0, |m| m + 1);
    let pool = PoolState::with_labels(dump.features.ids().iter().copied(), num_classes, labels.iter().copied())?;
    let stats = compute_class_stats(&dump.features, &pool)?;
    let mut result = score_candidates(&dump.features, &pool, &stats, &preds, &finals)?;
    if let Some(k) = k {
        select_top_k(&mut result, k)?;
    }
    let cmap: Vec<f64> = result.candidates.iter().map(|c| c.cmap_raw).collect();
    let ff: Vec<f64> = result.candidates.iter().map(|c| c.ff_raw as f64).collect();
    let (cmap_mean, cmap_std) = linalg::mean_std(&cmap);
    let (ff_mean, ff_std) = linalg::mean_std(&ff);
    let present: BTreeSet<usize> = stats.present_classes.clone();
    Ok(io::SelectionReport {
        config: io::ReportConfig {
            features: features.display().to_string(),
            predictions: predictions.display().to_string(),
            labeled: labeled.display().to_string(),
            k,
            threads,
        },
        summary: io::ReportSummary {
            n_candidates: result.candidates.len(),
            n_labeled: pool.num_labeled(),
            present_classes: present.into_iter().collect(),
            cma: cma(&stats).ok(),
            checkpoint_epochs: preds.epochs().to_vec(),
            cmap_mean,
            cmap_std,
            ff_mean,
            ff_std,
            selected: result.selected_ids(),
        },
        candidates: result,
    })
}
