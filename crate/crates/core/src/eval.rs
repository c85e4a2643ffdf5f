//! Dataset loading, train/test splitting, confusion-matrix metrics and
//! batch scanning of commit collections.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PatchRnn};
use crate::patch::{parse_patch_bytes, Label, PatchFile};
use crate::pipeline::PreparedSample;

pub const MANIFEST: &str = "labels.csv";
pub const SECURITY_DIR: &str = "security";
pub const NON_SECURITY_DIR: &str = "non_security";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("no sample under {root} could be loaded ({failures} failures)")]
    AllSamplesFailed { root: PathBuf, failures: usize },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOrigin {
    Directory,
    Manifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub path: PathBuf,
    pub patch: PatchFile,
    pub label: Label,
    pub origin: LabelOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<DatasetSample>,
    pub failures: Vec<LoadFailure>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Run every sample through the preprocessing pipeline; ids are paths
    /// relative to `root` when possible.
    pub fn prepare(
        &self,
        root: &Path,
        opts: &crate::pipeline::PipelineOptions,
    ) -> Vec<PreparedSample> {
        self.samples
            .iter()
            .map(|s| {
                let id = s
                    .path
                    .strip_prefix(root)
                    .unwrap_or(&s.path)
                    .to_string_lossy()
                    .into_owned();
                crate::pipeline::prepare(&s.patch, id, opts)
            })
            .collect()
    }
}

fn files_in(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.extend(files_in(&path)?);
        } else {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn parse_label(s: &str) -> Option<Label> {
    s.trim().parse().ok()
}

/// Load `root/security/*` and `root/non_security/*`, plus any rows of
/// `root/labels.csv`. Unreadable or unparseable files are recorded in
/// `failures`; a path listed twice is loaded once and the repeat recorded.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(EvalError::MissingRoot(root.to_path_buf()));
    }
    let mut entries: Vec<(PathBuf, Label, LabelOrigin)> = Vec::new();
    for (dir, label) in [
        (SECURITY_DIR, Label::Security),
        (NON_SECURITY_DIR, Label::NonSecurity),
    ] {
        let d = root.join(dir);
        if d.is_dir() {
            entries.extend(
                files_in(&d)?
                    .into_iter()
                    .map(|p| (p, label, LabelOrigin::Directory)),
            );
        }
    }
    let mut ds = Dataset::default();
    let manifest = root.join(MANIFEST);
    if manifest.is_file() {
        let bad = |reason: String| EvalError::Manifest {
            path: manifest.clone(),
            reason,
        };
        let mut reader = csv::Reader::from_path(&manifest).map_err(|e| bad(e.to_string()))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.len() < 2 || headers[0].trim() != "path" || headers[1].trim() != "label" {
            return Err(bad("header must be `path,label`".into()));
        }
        for row in reader.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let path = root.join(row[0].trim());
            match parse_label(&row[1]) {
                Some(label) => entries.push((path, label, LabelOrigin::Manifest)),
                None => ds.failures.push(LoadFailure {
                    path,
                    reason: format!("unknown label {:?}", &row[1]),
                }),
            }
        }
    }

    let mut seen = HashSet::new();
    for (path, label, origin) in entries {
        let key = fs::canonicalize(&path).unwrap_or_else(|_| path.clone());
        if !seen.insert(key) {
            ds.failures.push(LoadFailure {
                path,
                reason: "duplicate path".into(),
            });
            continue;
        }
        let parsed = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| parse_patch_bytes(&b).map_err(|e| e.to_string()));
        match parsed {
            Ok(mut patch) => {
                patch.label = Some(label);
                ds.samples.push(DatasetSample {
                    path,
                    patch,
                    label,
                    origin,
                });
            }
            Err(reason) => ds.failures.push(LoadFailure { path, reason }),
        }
    }
    if ds.samples.is_empty() {
        return Err(EvalError::AllSamplesFailed {
            root: root.to_path_buf(),
            failures: ds.failures.len(),
        });
    }
    Ok(ds)
}

/// Seeded shuffle of `0..n` cut at `round(fraction·n)`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let f = train_fraction.clamp(0.0, 1.0);
    let cut = ((f * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(cut);
    (idx, test)
}

pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let (tr, te) = split_indices(items.len(), train_fraction, seed);
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| items[i].clone()).collect();
    (pick(tr), pick(te))
}

/// Counts with security as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    /// From (actual, predicted) pairs.
    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (actual, predicted) in pairs {
            match (actual, predicted) {
                (Label::Security, Label::Security) => cm.tp += 1,
                (Label::NonSecurity, Label::Security) => cm.fp += 1,
                (Label::NonSecurity, Label::NonSecurity) => cm.tn += 1,
                (Label::Security, Label::NonSecurity) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Ratios derived from a confusion matrix. `None` marks a ratio whose
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        fpr: ratio(cm.fp, cm.fp + cm.tn),
        fnr: ratio(cm.fn_, cm.fn_ + cm.tp),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.2}%", v * 100.0))
}

/// Confusion matrix laid out with predictions as rows and actual classes as
/// columns, followed by the derived rates.
pub fn format_metrics_table(cm: &ConfusionMatrix, m: &Metrics) -> String {
    let cell = |n: u64, tag: &str| format!("{n} ({tag})");
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24}{:>22}{:>22}",
        "", "Actual Non-Security", "Actual Security"
    );
    let _ = writeln!(
        s,
        "{:<24}{:>22}{:>22}",
        "Predicted Non-Security",
        cell(cm.tn, "T.N."),
        cell(cm.fn_, "F.N.")
    );
    let _ = writeln!(
        s,
        "{:<24}{:>22}{:>22}",
        "Predicted Security",
        cell(cm.fp, "F.P."),
        cell(cm.tp, "T.P.")
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10}{}", "accuracy", pct(Some(m.accuracy)));
    let _ = writeln!(s, "{:<10}{}", "precision", pct(m.precision));
    let _ = writeln!(s, "{:<10}{}", "recall", pct(m.recall));
    let _ = writeln!(
        s,
        "{:<10}{}",
        "F1",
        m.f1.map_or("n/a".into(), |v| format!("{v:.3}"))
    );
    let _ = writeln!(s, "{:<10}{}", "FPR", pct(m.fpr));
    let _ = writeln!(s, "{:<10}{}", "FNR", pct(m.fnr));
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_metrics_table(&self.matrix, &self.metrics))
    }
}

/// Predict every labeled sample and tabulate against its label.
pub fn evaluate(model: &PatchRnn, test: &[PreparedSample], threads: usize) -> Result<Evaluation> {
    let predictions = model.predict_prepared(test, threads)?;
    let mut pairs = Vec::with_capacity(test.len());
    for (s, p) in test.iter().zip(&predictions) {
        let actual = s.label.ok_or_else(|| ModelError::Unlabeled(s.id.clone()))?;
        pairs.push((actual, p.label));
    }
    let matrix = ConfusionMatrix::from_pairs(pairs);
    Ok(Evaluation {
        matrix,
        metrics: compute_metrics(&matrix)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub commit_id: Option<String>,
    pub path: PathBuf,
    pub label: Option<Label>,
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub flagged: usize,
    pub total: usize,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub summary: ScanSummary,
}

/// Classify every file. Rows come back by descending probability (path as
/// tie-break), unreadable files last; `total` counts classified files only.
pub fn scan_commits(model: &PatchRnn, paths: &[PathBuf], threads: usize) -> Result<ScanReport> {
    let mut rows = Vec::with_capacity(paths.len());
    let mut samples = Vec::new();
    let mut ok_rows = Vec::new();
    for path in paths {
        let parsed = fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|b| parse_patch_bytes(&b).map_err(|e| e.to_string()));
        match parsed {
            Ok(patch) => {
                samples.push(model.prepare(&patch, &path.to_string_lossy()));
                ok_rows.push((patch.commit_id, path.clone()));
            }
            Err(e) => rows.push(ScanRow {
                commit_id: None,
                path: path.clone(),
                label: None,
                probability: None,
                error: Some(e),
            }),
        }
    }
    let predictions = model.predict_prepared(&samples, threads)?;
    let mut scored: Vec<ScanRow> = ok_rows
        .into_iter()
        .zip(predictions)
        .map(|((commit_id, path), p)| ScanRow {
            commit_id,
            path,
            label: Some(p.label),
            probability: Some(p.probability),
            error: None,
        })
        .collect();
    scored.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.path.cmp(&b.path))
    });
    rows.sort_by(|a, b| a.path.cmp(&b.path));
    let summary = ScanSummary {
        flagged: scored
            .iter()
            .filter(|r| r.label == Some(Label::Security))
            .count(),
        total: scored.len(),
        model_version: model.version(),
    };
    scored.extend(rows);
    Ok(ScanReport {
        rows: scored,
        summary,
    })
}

impl ScanReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let id = r.commit_id.as_deref().unwrap_or("-");
            match (&r.error, r.label, r.probability) {
                (Some(e), _, _) => {
                    let _ = writeln!(s, "{}\t{id}\terror\t{e}", r.path.display());
                }
                (None, Some(l), Some(p)) => {
                    let _ = writeln!(s, "{}\t{id}\t{}\t{p:.6}", r.path.display(), l.as_str());
                }
                _ => {}
            }
        }
        let _ = writeln!(
            s,
            "flagged {} of {} (model {})",
            self.summary.flagged, self.summary.total, self.summary.model_version
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
