//! Train/test splitting, confusion matrices and the identification decision.
//!
//! Confusion matrices are oriented with **rows = predicted class** and
//! **columns = target class**. Precision is therefore row-wise and recall
//! column-wise.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::mlp::{MlpError, MlpModel};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.65;
pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("class {class} has {rows} rows; at least 2 are needed to split")]
    ClassTooSmall { class: String, rows: usize },
    #[error("dataset has {0} rows; at least 2 are needed to split")]
    TooFewRows(usize),
    #[error("model has {outputs} outputs but data has {classes} classes")]
    ClassCount { outputs: usize, classes: usize },
    #[error("class {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("threshold {0} must lie in [0, 1]")]
    BadThreshold(f64),
    #[error("confusion CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] MlpError),
}

/// Index partition of a dataset into train and test rows, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn train_count(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).clamp(1, n - 1)
}

/// Random split with `round(n * train_frac)` training rows, taken per class
/// when `stratified`. Every class keeps at least one row on each side.
pub fn split_indices(
    data: &LabeledDataset,
    train_frac: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitIndices, EvalError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(EvalError::BadFraction(train_frac));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        let mut by_class = vec![Vec::new(); data.n_classes()];
        for (i, &label) in data.y.iter().enumerate() {
            by_class[label].push(i);
        }
        for (class, mut rows) in by_class.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            if rows.len() < 2 {
                return Err(EvalError::ClassTooSmall {
                    class: data.class_names[class].clone(),
                    rows: rows.len(),
                });
            }
            rows.shuffle(&mut rng);
            let k = train_count(rows.len(), train_frac);
            train.extend_from_slice(&rows[..k]);
            test.extend_from_slice(&rows[k..]);
        }
    } else {
        if data.len() < 2 {
            return Err(EvalError::TooFewRows(data.len()));
        }
        let mut rows: Vec<usize> = (0..data.len()).collect();
        rows.shuffle(&mut rng);
        let k = train_count(rows.len(), train_frac);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(
    data: &LabeledDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), EvalError> {
    let idx = split_indices(data, train_frac, seed, true)?;
    Ok((data.subset(&idx.train), data.subset(&idx.test)))
}

/// Per-class precision and recall. A statistic whose denominator is zero is
/// reported as 0 and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// `counts[predicted][target]`.
    pub counts: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, predicted: usize, target: usize) {
        self.counts[predicted][target] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, predicted: usize) -> u64 {
        self.counts[predicted].iter().sum()
    }

    pub fn col_sum(&self, target: usize) -> u64 {
        self.counts.iter().map(|r| r[target]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }

    pub fn class_stats(&self) -> Vec<ClassStats> {
        (0..self.n_classes())
            .map(|i| {
                let (precision, precision_undefined) = ratio(self.counts[i][i], self.row_sum(i));
                let (recall, recall_undefined) = ratio(self.counts[i][i], self.col_sum(i));
                ClassStats {
                    class: self.class_names[i].clone(),
                    precision,
                    recall,
                    precision_undefined,
                    recall_undefined,
                }
            })
            .collect()
    }
}

const EVAL_CHUNK: usize = 512;

/// Predicted class for each row, in row order.
pub fn predict_all(model: &MlpModel, rows: &[Vec<f64>]) -> Result<Vec<(usize, f64)>, EvalError> {
    let parts: Result<Vec<_>, MlpError> = rows.par_chunks(EVAL_CHUNK).map(|c| model.predict_batch(c)).collect();
    Ok(parts?.into_iter().flatten().collect())
}

pub fn evaluate(model: &MlpModel, test: &LabeledDataset) -> Result<ConfusionMatrix, EvalError> {
    let n = test.n_classes();
    if model.n_outputs() != n {
        return Err(EvalError::ClassCount {
            outputs: model.n_outputs(),
            classes: n,
        });
    }
    if let Some(&class) = test.y.iter().find(|&&c| c >= n) {
        return Err(EvalError::ClassOutOfRange { class, n_classes: n });
    }
    let preds = predict_all(model, &test.x)?;
    let mut cm = ConfusionMatrix::new(test.class_names.clone());
    for ((pred, _), &target) in preds.iter().zip(&test.y) {
        cm.record(*pred, target);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Match,
    Mismatch,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Match => "MATCH",
            Verdict::Mismatch => "MISMATCH",
            Verdict::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityVerdict {
    pub claimed_class: usize,
    pub predicted_class: usize,
    pub confidence: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

pub fn decide(claimed: usize, predicted: usize, confidence: f64, threshold: f64) -> Verdict {
    if confidence < threshold {
        Verdict::Unknown
    } else if predicted == claimed {
        Verdict::Match
    } else {
        Verdict::Mismatch
    }
}

/// Checks whether `x` fingerprints as `claimed_class`.
pub fn identify(
    model: &MlpModel,
    x: &[f64],
    claimed_class: usize,
    threshold: f64,
) -> Result<IdentityVerdict, EvalError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::BadThreshold(threshold));
    }
    if claimed_class >= model.n_outputs() {
        return Err(EvalError::ClassOutOfRange {
            class: claimed_class,
            n_classes: model.n_outputs(),
        });
    }
    let (predicted_class, confidence) = model.predict(x)?;
    Ok(IdentityVerdict {
        claimed_class,
        predicted_class,
        confidence,
        threshold,
        verdict: decide(claimed_class, predicted_class, confidence, threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

/// Serializable view of a confusion matrix with its derived statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub schema: u32,
    pub orientation: String,
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassStats>,
}

impl From<&ConfusionMatrix> for ConfusionReport {
    fn from(cm: &ConfusionMatrix) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            orientation: "rows=predicted,columns=target".into(),
            class_names: cm.class_names.clone(),
            counts: cm.counts.clone(),
            total: cm.total(),
            accuracy: cm.accuracy(),
            per_class: cm.class_stats(),
        }
    }
}

/// Count with its share of the total, e.g. `176 14.0%`.
pub fn format_cell(count: u64, total: u64) -> String {
    let pct = if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    };
    format!("{count} {pct:.1}%")
}

fn pct(v: f64, undefined: bool) -> String {
    if undefined {
        "n/a".into()
    } else {
        format!("{:.1}%", 100.0 * v)
    }
}

fn render_text(cm: &ConfusionMatrix) -> String {
    let total = cm.total();
    let stats = cm.class_stats();
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["predicted \\ target".to_string()];
    header.extend(cm.class_names.iter().cloned());
    header.push("precision".into());
    table.push(header);
    for (i, row) in cm.counts.iter().enumerate() {
        let mut line = vec![cm.class_names[i].clone()];
        line.extend(row.iter().map(|&c| format_cell(c, total)));
        line.push(pct(stats[i].precision, stats[i].precision_undefined));
        table.push(line);
    }
    let mut last = vec!["recall".to_string()];
    last.extend(stats.iter().map(|s| pct(s.recall, s.recall_undefined)));
    last.push(pct(cm.accuracy(), total == 0));
    table.push(last);

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    let _ = writeln!(out, "accuracy: {:.2}% ({} of {})", 100.0 * cm.accuracy(), cm.trace(), total);
    out
}

const CSV_CORNER: &str = "predicted\\target";

fn render_csv(cm: &ConfusionMatrix) -> String {
    let stats = cm.class_stats();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![CSV_CORNER.to_string()];
    header.extend(cm.class_names.iter().cloned());
    header.push("precision".into());
    w.write_record(&header).expect("in-memory write");
    for (i, row) in cm.counts.iter().enumerate() {
        let mut rec = vec![cm.class_names[i].clone()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(format!("{:.6}", stats[i].precision));
        w.write_record(&rec).expect("in-memory write");
    }
    let mut rec = vec!["recall".to_string()];
    rec.extend(stats.iter().map(|s| format!("{:.6}", s.recall)));
    rec.push(format!("{:.6}", cm.accuracy()));
    w.write_record(&rec).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn render_report(cm: &ConfusionMatrix, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(cm),
        ReportFormat::Csv => render_csv(cm),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&ConfusionReport::from(cm)).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

/// Parses the CSV produced by [`render_report`] back into a matrix.
pub fn parse_csv_report(input: &str) -> Result<ConfusionMatrix, EvalError> {
    let err = |m: String| EvalError::Parse(m);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| err(e.to_string()))?;
    let header = rows.first().ok_or_else(|| err("empty input".into()))?;
    if header.len() < 2 || &header[0] != CSV_CORNER || &header[header.len() - 1] != "precision" {
        return Err(err("missing header row".into()));
    }
    let names: Vec<String> = header.iter().skip(1).take(header.len() - 2).map(str::to_string).collect();
    let n = names.len();
    if rows.len() != n + 2 {
        return Err(err(format!("expected {} rows, found {}", n + 2, rows.len())));
    }
    let mut counts = Vec::with_capacity(n);
    for (i, rec) in rows[1..=n].iter().enumerate() {
        if rec.len() != n + 2 {
            return Err(err(format!("row {} has {} fields, expected {}", i + 1, rec.len(), n + 2)));
        }
        if rec[0] != names[i] {
            return Err(err(format!("row {} is labelled {:?}, expected {:?}", i + 1, &rec[0], names[i])));
        }
        let row = (1..=n)
            .map(|j| rec[j].trim().parse::<u64>().map_err(|e| err(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rec[n + 1]
            .trim()
            .parse::<f64>()
            .map_err(|e| err(format!("row {} precision: {e}", i + 1)))?;
        counts.push(row);
    }
    let last = &rows[n + 1];
    if last.len() != n + 2 || &last[0] != "recall" {
        return Err(err("missing recall row".into()));
    }
    for field in last.iter().skip(1) {
        field.trim().parse::<f64>().map_err(|e| err(format!("recall row: {e}")))?;
    }
    counts
        .iter()
        .flatten()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .ok_or_else(|| err("counts overflow".into()))?;
    Ok(ConfusionMatrix { class_names: names, counts })
}
