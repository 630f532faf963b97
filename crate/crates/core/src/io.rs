//! On-disk formats.
//!
//! Feature dump: a binary file and a companion text index.
//!
//! ```text
//! offset 0   b"NCF1"
//! offset 4   version   u32 LE (1)
//! offset 8   n_samples u32 LE
//! offset 12  dim       u32 LE
//! offset 16  n_samples × dim f32 LE, row-major
//! ```
//!
//! The index has one `sample_id,true_label_or_-1` line per row, in row order.
//! Prediction logs are `sample_id,epoch,predicted_class` tables sorted by
//! `(sample_id, epoch)`. Selection reports are JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionResult, CheckpointPredictions};
use crate::error::{Error, Result};
use crate::pool::{FeatureMatrix, SampleId};

pub const MAGIC: &[u8; 4] = b"NCF1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const PREDICTION_HEADER: &str = "sample_id,epoch,predicted_class";
pub const LABEL_HEADER: &str = "sample_id,class";

/// Binary payload for `features`, narrowed to f32.
pub fn encode_features(features: &FeatureMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(features.n_samples())
        .map_err(|_| Error::ShapeMismatch("too many samples for a u32 header".into()))?;
    let d = u32::try_from(features.dim())
        .map_err(|_| Error::ShapeMismatch("dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in features.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFiniteInput(format!("{v} overflows f32")));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a binary payload into `(n_samples, dim, values)`.
pub fn decode_features(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().expect("4 bytes"),
            });
        }
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].try_into().expect("4 bytes"),
        });
    }
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let expected = HEADER_LEN + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                offset: HEADER_LEN + 4 * i,
                row: i / d,
                col: i % d,
            });
        }
        values.push(v as f64);
    }
    Ok((n, d, values))
}

/// Index lines for the given ids and optional labels (`-1` when unknown).
pub fn encode_index(ids: &[SampleId], labels: &[Option<usize>]) -> String {
    let mut out = String::new();
    for (id, label) in ids.iter().zip(labels) {
        match label {
            Some(l) => writeln!(out, "{id},{l}"),
            None => writeln!(out, "{id},-1"),
        }
        .expect("write to String");
    }
    out
}

pub fn decode_index(text: &str) -> Result<(Vec<SampleId>, Vec<Option<usize>>)> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let (id, label) = split_pair(line, line_no)?;
        ids.push(parse_num(id, line_no)?);
        labels.push(match label.trim() {
            "-1" => None,
            l => Some(parse_num(l, line_no)?),
        });
    }
    Ok((ids, labels))
}

/// Features plus the per-row label column from the index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub features: FeatureMatrix,
    pub labels: Vec<Option<usize>>,
}

/// Path of the companion index for a binary dump: `<path>.idx`.
pub fn index_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    p.into()
}

pub fn write_feature_dump(path: &Path, features: &FeatureMatrix, labels: &[Option<usize>]) -> Result<()> {
    if labels.len() != features.n_samples() {
        return Err(Error::IndexMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features.n_samples()
        )));
    }
    fs::write(path, encode_features(features)?)?;
    fs::write(index_path(path), encode_index(features.ids(), labels))?;
    Ok(())
}

pub fn read_feature_dump(path: &Path) -> Result<FeatureDump> {
    let (n, d, values) = decode_features(&fs::read(path)?)?;
    let (ids, labels) = decode_index(&fs::read_to_string(index_path(path))?)?;
    if ids.len() != n {
        return Err(Error::IndexMismatch(format!("index has {} lines for {n} rows", ids.len())));
    }
    let features = FeatureMatrix::new(ids, d, values).map_err(|e| match e {
        Error::DuplicateId(id) => Error::IndexMismatch(format!("duplicate id {id} in index")),
        other => other,
    })?;
    Ok(FeatureDump { features, labels })
}

pub fn encode_predictions(preds: &CheckpointPredictions) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for (id, seq) in preds.predictions() {
        for (epoch, class) in preds.epochs().iter().zip(seq) {
            writeln!(out, "{id},{epoch},{class}").expect("write to String");
        }
    }
    out
}

pub fn decode_predictions(text: &str) -> Result<CheckpointPredictions> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == PREDICTION_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {PREDICTION_HEADER:?}"),
            })
        }
    }
    let mut rows: BTreeMap<SampleId, Vec<(usize, usize)>> = BTreeMap::new();
    let mut last: Option<(SampleId, usize)> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected 3 fields".into(),
            });
        }
        let id: SampleId = parse_num(fields[0], line_no)?;
        let epoch: usize = parse_num(fields[1], line_no)?;
        let class: usize = parse_num(fields[2], line_no)?;
        if last.is_some_and(|prev| prev >= (id, epoch)) {
            return Err(Error::Parse {
                line: line_no,
                msg: "rows must be sorted by (sample_id, epoch) without repeats".into(),
            });
        }
        last = Some((id, epoch));
        rows.entry(id).or_default().push((epoch, class));
    }
    let epochs: Vec<usize> = rows
        .values()
        .next()
        .map(|r| r.iter().map(|e| e.0).collect())
        .unwrap_or_default();
    let mut predictions = BTreeMap::new();
    for (id, r) in rows {
        if r.len() != epochs.len() || r.iter().zip(&epochs).any(|(a, &e)| a.0 != e) {
            return Err(Error::IndexMismatch(format!("sample {id} has a different epoch sequence")));
        }
        predictions.insert(id, r.into_iter().map(|e| e.1).collect());
    }
    CheckpointPredictions::new(epochs, predictions)
}

pub fn write_predictions(path: &Path, preds: &CheckpointPredictions) -> Result<()> {
    Ok(fs::write(path, encode_predictions(preds))?)
}

pub fn read_predictions(path: &Path) -> Result<CheckpointPredictions> {
    decode_predictions(&fs::read_to_string(path)?)
}

/// `sample_id,class` table with header.
pub fn encode_labels(labels: &[(SampleId, usize)]) -> String {
    let mut out = String::from(LABEL_HEADER);
    out.push('\n');
    for (id, c) in labels {
        writeln!(out, "{id},{c}").expect("write to String");
    }
    out
}

pub fn decode_labels(text: &str) -> Result<Vec<(SampleId, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.trim() == LABEL_HEADER {
            continue;
        }
        let (id, class) = split_pair(line, i + 1)?;
        out.push((parse_num(id, i + 1)?, parse_num(class, i + 1)?));
    }
    Ok(out)
}

/// Scoring inputs echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub features: String,
    pub predictions: String,
    pub labeled: String,
    pub k: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_candidates: usize,
    pub n_labeled: usize,
    pub present_classes: Vec<usize>,
    pub cma: Option<f64>,
    pub checkpoint_epochs: Vec<usize>,
    pub cmap_mean: f64,
    pub cmap_std: f64,
    pub ff_mean: f64,
    pub ff_std: f64,
    pub selected: Vec<SampleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub config: ReportConfig,
    pub candidates: AcquisitionResult,
    pub summary: ReportSummary,
}

pub fn encode_report(report: &SelectionReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn decode_report(text: &str) -> Result<SelectionReport> {
    let report: SelectionReport = serde_json::from_str(text)?;
    let n = report.candidates.candidates.len();
    let mut ranks: Vec<usize> = report.candidates.candidates.iter().map(|c| c.rank).collect();
    ranks.sort_unstable();
    if ranks.iter().enumerate().any(|(i, &r)| i != r) {
        return Err(Error::IndexMismatch(format!("ranks are not a permutation of 0..{n}")));
    }
    Ok(report)
}

pub fn write_report(path: &Path, report: &SelectionReport) -> Result<()> {
    Ok(fs::write(path, encode_report(report)?)?)
}

pub fn read_report(path: &Path) -> Result<SelectionReport> {
    decode_report(&fs::read_to_string(path)?)
}

fn split_pair(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let mut parts = line.split(',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::Parse {
            line: line_no,
            msg: format!("expected 2 comma-separated fields in {line:?}"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a non-negative integer: {s:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> FeatureMatrix {
        FeatureMatrix::from_rows(vec![5, 9, 2], &[vec![1.5, -2.0], vec![0.25, 3.0], vec![-0.125, 8.0]]).unwrap()
    }

    #[test]
    fn dump_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ncf");
        let labels = vec![Some(1), None, Some(0)];
        write_feature_dump(&path, &matrix(), &labels).unwrap();
        let dump = read_feature_dump(&path).unwrap();
        assert_eq!(dump.features, matrix());
        assert_eq!(dump.labels, labels);
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 4 * 6);
        assert_eq!(fs::read_to_string(index_path(&path)).unwrap(), "5,1\n9,-1\n2,0\n");
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = encode_features(&matrix()).unwrap();
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload { expected: 40, actual: 39 })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(Error::BadMagic { .. })));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode_features(&v2), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn nan_reports_row_and_column() {
        let mut bytes = encode_features(&matrix()).unwrap();
        // row 2, column 1 is value index 5
        let at = HEADER_LEN + 4 * 5;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::NonFiniteValue { offset: 36, row: 2, col: 1 })
        ));
    }

    #[test]
    fn index_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ncf");
        write_feature_dump(&path, &matrix(), &[None, None, None]).unwrap();
        fs::write(index_path(&path), "5,-1\n9,-1\n").unwrap();
        assert!(matches!(read_feature_dump(&path), Err(Error::IndexMismatch(_))));
        fs::write(index_path(&path), "5,-1\n5,-1\n2,-1\n").unwrap();
        assert!(matches!(read_feature_dump(&path), Err(Error::IndexMismatch(_))));
    }

    #[test]
    fn prediction_log_roundtrip_and_validation() {
        let preds = CheckpointPredictions::new(
            vec![3, 4, 6],
            BTreeMap::from([(1, vec![0, 1, 1]), (7, vec![2, 2, 0])]),
        )
        .unwrap();
        let text = encode_predictions(&preds);
        assert!(text.starts_with("sample_id,epoch,predicted_class\n1,3,0\n1,4,1\n"));
        assert_eq!(decode_predictions(&text).unwrap(), preds);

        let unsorted = "sample_id,epoch,predicted_class\n1,4,0\n1,3,0\n";
        assert!(matches!(decode_predictions(unsorted), Err(Error::Parse { line: 3, .. })));
        let uneven = "sample_id,epoch,predicted_class\n1,3,0\n1,4,0\n2,3,1\n2,5,1\n";
        assert!(matches!(decode_predictions(uneven), Err(Error::IndexMismatch(_))));
        assert!(decode_predictions("id,epoch\n").is_err());
    }

    #[test]
    fn labels_roundtrip() {
        let l = vec![(4, 1), (2, 0)];
        assert_eq!(decode_labels(&encode_labels(&l)).unwrap(), l);
        assert!(decode_labels("sample_id,class\n4,x\n").is_err());
    }
}
