//! On-disk CSV formats.
//!
//! Every artifact CSV starts with a comment line such as
//! `# schema=1 kind=records seed=7 config_hash=…` followed by a header row.
//! Floats are written in Rust's shortest round-trip form, so a parse of a
//! written file reproduces the values exactly.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channelsim::{RawDataset, RawRecord};
use crate::dataset::LabeledDataset;
use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::mlp::TrainTrace;
use crate::waveform::Waveform;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing or malformed provenance line: {0}")]
    Provenance(String),
    #[error("unsupported schema version {found} (expected {SCHEMA})")]
    Schema { found: String },
    #[error("expected a {expected} file, found kind {found}")]
    Kind { expected: &'static str, found: String },
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    /// True for failures caused by the file's declared shape or version
    /// rather than by I/O.
    pub fn is_schema(&self) -> bool {
        !matches!(self, FormatError::Io(_))
    }
}

/// Seed and configuration digest that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// SHA-256 of the value's JSON serialization, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

fn write_provenance<W: Write>(w: &mut W, kind: &str, p: &Provenance) -> std::io::Result<()> {
    writeln!(w, "# schema={SCHEMA} kind={kind} seed={} config_hash={}", p.seed, p.config_hash)
}

fn read_provenance<R: BufRead>(r: &mut R, kind: &'static str) -> Result<Provenance, FormatError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let body = line
        .trim_end()
        .strip_prefix('#')
        .ok_or_else(|| FormatError::Provenance("first line must start with '#'".into()))?;
    let (mut schema, mut found_kind, mut seed, mut hash) = (None, None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| FormatError::Provenance(format!("token {tok:?} is not key=value")))?;
        match k {
            "schema" => schema = Some(v),
            "kind" => found_kind = Some(v),
            "seed" => seed = Some(v),
            "config_hash" => hash = Some(v),
            _ => {}
        }
    }
    let schema = schema.ok_or_else(|| FormatError::Provenance("schema missing".into()))?;
    if schema != SCHEMA.to_string() {
        return Err(FormatError::Schema { found: schema.into() });
    }
    let found_kind = found_kind.ok_or_else(|| FormatError::Provenance("kind missing".into()))?;
    if found_kind != kind {
        return Err(FormatError::Kind {
            expected: kind,
            found: found_kind.into(),
        });
    }
    let seed = seed
        .ok_or_else(|| FormatError::Provenance("seed missing".into()))?
        .parse()
        .map_err(|e| FormatError::Provenance(format!("seed: {e}")))?;
    let config_hash = hash
        .ok_or_else(|| FormatError::Provenance("config_hash missing".into()))?
        .to_string();
    Ok(Provenance { seed, config_hash })
}

fn check_header(found: &csv::StringRecord, expected: &[String]) -> Result<(), FormatError> {
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        let shown: Vec<&str> = found.iter().take(8).collect();
        return Err(FormatError::Header(format!(
            "expected columns starting {:?}, found {:?}",
            &expected[..expected.len().min(8)],
            shown
        )));
    }
    Ok(())
}

/// File line of a record read after the provenance line.
fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line() + 1)
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64, FormatError> {
    let line = line_of(rec);
    let v: f64 = rec[idx].trim().parse().map_err(|e| FormatError::Row {
        line,
        msg: format!("{what}: {e}"),
    })?;
    if !v.is_finite() {
        return Err(FormatError::Row {
            line,
            msg: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

/// Raw window records.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordsFile {
    pub provenance: Provenance,
    pub data: RawDataset,
}

fn records_header(window_len: usize) -> Vec<String> {
    let mut h = vec!["ecu".to_string(), "channel".into(), "sample_rate_hz".into()];
    h.extend((0..window_len).map(|i| format!("s{i}")));
    h
}

pub fn write_records<W: Write>(mut w: W, file: &RecordsFile) -> Result<(), FormatError> {
    write_provenance(&mut w, "records", &file.provenance)?;
    let mut out = writer(w);
    out.write_record(records_header(file.data.window_len))?;
    let fs = file.data.sample_rate_hz.to_string();
    for r in &file.data.records {
        if r.samples.len() != file.data.window_len {
            return Err(FormatError::Invalid(format!(
                "record has {} samples, window is {}",
                r.samples.len(),
                file.data.window_len
            )));
        }
        let mut rec = vec![r.ecu_id.clone(), r.channel_id.clone(), fs.clone()];
        rec.extend(r.samples.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<RecordsFile, FormatError> {
    let mut br = BufReader::new(r);
    let provenance = read_provenance(&mut br, "records")?;
    let mut rdr = reader(br);
    let header = rdr.headers()?.clone();
    if header.len() < 4 {
        return Err(FormatError::Header("records need ecu, channel, sample_rate_hz and samples".into()));
    }
    let window_len = header.len() - 3;
    check_header(&header, &records_header(window_len))?;
    let mut records = Vec::new();
    let mut sample_rate_hz = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let fs = parse_f64(&rec, 2, "sample_rate_hz")?;
        if fs <= 0.0 {
            return Err(FormatError::Row {
                line,
                msg: "sample_rate_hz must be positive".into(),
            });
        }
        match sample_rate_hz {
            None => sample_rate_hz = Some(fs),
            Some(prev) if prev != fs => {
                return Err(FormatError::Row {
                    line,
                    msg: format!("sample rate {fs} differs from {prev}"),
                })
            }
            _ => {}
        }
        let samples = (3..rec.len())
            .map(|i| parse_f64(&rec, i, &header[i]))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(RawRecord {
            ecu_id: rec[0].to_string(),
            channel_id: rec[1].to_string(),
            samples,
        });
    }
    let sample_rate_hz = sample_rate_hz.ok_or_else(|| FormatError::Invalid("records file has no rows".into()))?;
    Ok(RecordsFile {
        provenance,
        data: RawDataset {
            sample_rate_hz,
            window_len,
            records,
        },
    })
}

/// One extracted feature vector with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub ecu_id: String,
    pub channel_id: String,
    pub features: [f64; FEATURE_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Channel,
    Ecu,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Channel => "channel",
            Task::Ecu => "ecu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturesFile {
    pub provenance: Provenance,
    pub rows: Vec<FeatureRow>,
}

impl FeaturesFile {
    /// Label for `row` under `task`.
    pub fn label(row: &FeatureRow, task: Task) -> &str {
        match task {
            Task::Channel => &row.channel_id,
            Task::Ecu => &row.ecu_id,
        }
    }

    /// Class names in order of first appearance.
    pub fn class_names(&self, task: Task) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            let l = Self::label(row, task);
            if !names.iter().any(|n| n == l) {
                names.push(l.to_string());
            }
        }
        names
    }

    /// Labeled matrix for `task`, indexing labels into `class_names`.
    pub fn to_labeled(&self, task: Task, class_names: &[String]) -> Result<LabeledDataset, FormatError> {
        let mut x = Vec::with_capacity(self.rows.len());
        let mut y = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let l = Self::label(row, task);
            let idx = class_names
                .iter()
                .position(|n| n == l)
                .ok_or_else(|| FormatError::Invalid(format!("{} label {l:?} is not a known class", task.as_str())))?;
            x.push(row.features.to_vec());
            y.push(idx);
        }
        LabeledDataset::new(x, y, class_names.to_vec()).map_err(|e| FormatError::Invalid(e.to_string()))
    }
}

fn features_header() -> Vec<String> {
    let mut h = vec!["ecu".to_string(), "channel".into()];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h
}

pub fn write_features<W: Write>(mut w: W, file: &FeaturesFile) -> Result<(), FormatError> {
    write_provenance(&mut w, "features", &file.provenance)?;
    let mut out = writer(w);
    out.write_record(features_header())?;
    for row in &file.rows {
        let mut rec = vec![row.ecu_id.clone(), row.channel_id.clone()];
        rec.extend(row.features.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<FeaturesFile, FormatError> {
    let mut br = BufReader::new(r);
    let provenance = read_provenance(&mut br, "features")?;
    let mut rdr = reader(br);
    let header = rdr.headers()?.clone();
    check_header(&header, &features_header())?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut features = [0.0; FEATURE_COUNT];
        for (i, f) in features.iter_mut().enumerate() {
            *f = parse_f64(&rec, i + 2, FEATURE_NAMES[i])?;
        }
        rows.push(FeatureRow {
            ecu_id: rec[0].to_string(),
            channel_id: rec[1].to_string(),
            features,
        });
    }
    Ok(FeaturesFile { provenance, rows })
}

/// Per-epoch loss and gradient norm; epoch 0 is the starting point.
pub fn write_trace<W: Write>(mut w: W, provenance: &Provenance, trace: &TrainTrace) -> Result<(), FormatError> {
    write_provenance(&mut w, "trace", provenance)?;
    let mut out = writer(w);
    out.write_record(["epoch", "loss", "grad_inf_norm"])?;
    out.write_record([
        "0".to_string(),
        trace.initial_loss.to_string(),
        trace.initial_grad_inf_norm.to_string(),
    ])?;
    for e in &trace.epochs {
        out.write_record([e.epoch.to_string(), e.loss.to_string(), e.grad_inf_norm.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a waveform as `time_s,volts` rows, readable by [`read_scope_csv`].
pub fn write_scope_csv<W: Write>(w: W, wave: &Waveform) -> Result<(), FormatError> {
    let mut out = writer(w);
    out.write_record(["time_s", "volts"])?;
    for (i, v) in wave.samples.iter().enumerate() {
        out.write_record([wave.time_of(i).to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a two-column `time,volts` oscilloscope export and resamples it onto
/// a uniform grid at `sample_rate_hz` by linear interpolation. A non-numeric
/// first row is treated as a header.
pub fn read_scope_csv<R: Read>(r: R, sample_rate_hz: f64) -> Result<Waveform, FormatError> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(FormatError::Invalid(format!("sample rate {sample_rate_hz} must be positive")));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(FormatError::Row {
                line,
                msg: "expected time,volts".into(),
            });
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        let (ti, vi) = match parsed {
            (Ok(a), Ok(b)) => (a, b),
            _ if i == 0 => continue,
            _ => {
                return Err(FormatError::Row {
                    line,
                    msg: "time and volts must be numbers".into(),
                })
            }
        };
        if !(ti.is_finite() && vi.is_finite()) {
            return Err(FormatError::Row {
                line,
                msg: "non-finite value".into(),
            });
        }
        if let Some(&prev) = t.last() {
            if ti <= prev {
                return Err(FormatError::Row {
                    line,
                    msg: "time must be strictly increasing".into(),
                });
            }
        }
        t.push(ti);
        v.push(vi);
    }
    if t.len() < 2 {
        return Err(FormatError::Invalid("capture needs at least two samples".into()));
    }
    let dt = 1.0 / sample_rate_hz;
    let span = t[t.len() - 1] - t[0];
    let n = (span / dt).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let ti = t[0] + i as f64 * dt;
        while k + 2 < t.len() && t[k + 1] < ti {
            k += 1;
        }
        let frac = ((ti - t[k]) / (t[k + 1] - t[k])).clamp(0.0, 1.0);
        out.push(v[k] + frac * (v[k + 1] - v[k]));
    }
    Ok(Waveform::new(out, sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prov() -> Provenance {
        Provenance {
            seed: 42,
            config_hash: "ab12".into(),
        }
    }

    fn records() -> RecordsFile {
        RecordsFile {
            provenance: prov(),
            data: RawDataset {
                sample_rate_hz: 1e7,
                window_len: 3,
                records: vec![
                    RawRecord {
                        ecu_id: "E1".into(),
                        channel_id: "GXL-0.5m".into(),
                        samples: vec![0.1, -2.5e-7, 1.0 / 3.0],
                    },
                    RawRecord {
                        ecu_id: "E2".into(),
                        channel_id: "a,b".into(),
                        samples: vec![0.0, 2.0, 1e300],
                    },
                ],
            },
        }
    }

    #[test]
    fn records_round_trip() {
        let mut buf = Vec::new();
        write_records(&mut buf, &records()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema=1 kind=records seed=42 config_hash=ab12\necu,channel,sample_rate_hz,s0,s1,s2\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), records());
    }

    #[test]
    fn wrong_kind_or_schema_rejected() {
        let mut buf = Vec::new();
        write_records(&mut buf, &records()).unwrap();
        assert!(matches!(read_features(&buf[..]), Err(FormatError::Kind { .. })));
        let text = String::from_utf8(buf).unwrap().replace("schema=1", "schema=2");
        assert!(matches!(read_records(text.as_bytes()), Err(FormatError::Schema { .. })));
        assert!(matches!(read_records(&b"ecu,channel\n"[..]), Err(FormatError::Provenance(_))));
    }

    #[test]
    fn bad_cells_name_the_line() {
        let text = "# schema=1 kind=records seed=1 config_hash=x\necu,channel,sample_rate_hz,s0\nE1,C,1e7,0.5\nE1,C,1e7,oops\n";
        let err = read_records(text.as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Row { line: 4, .. }), "{err}");
    }

    #[test]
    fn features_round_trip_and_labels() {
        let mut f = [0.0; FEATURE_COUNT];
        f[3] = 0.25;
        let file = FeaturesFile {
            provenance: prov(),
            rows: vec![
                FeatureRow {
                    ecu_id: "E2".into(),
                    channel_id: "C1".into(),
                    features: f,
                },
                FeatureRow {
                    ecu_id: "E1".into(),
                    channel_id: "C1".into(),
                    features: f,
                },
            ],
        };
        let mut buf = Vec::new();
        write_features(&mut buf, &file).unwrap();
        let back = read_features(&buf[..]).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.class_names(Task::Ecu), vec!["E2", "E1"]);
        let ds = back.to_labeled(Task::Ecu, &["E1".into(), "E2".into()]).unwrap();
        assert_eq!(ds.y, vec![1, 0]);
        assert!(back.to_labeled(Task::Ecu, &["E1".into()]).is_err());
    }

    #[test]
    fn scope_resampling() {
        let text = "time,volts\n0,0\n1e-6,2\n2e-6,0\n";
        let w = read_scope_csv(text.as_bytes(), 4e6).unwrap();
        assert_eq!(w.samples.len(), 9);
        let expect = [0.0, 0.5, 1.0, 1.5, 2.0, 1.5, 1.0, 0.5, 0.0];
        for (a, b) in w.samples.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn scope_write_read_identity() {
        let w = Waveform::new(vec![0.0, 2.0, 2.0, 0.5, 0.0], 1e7);
        let mut buf = Vec::new();
        write_scope_csv(&mut buf, &w).unwrap();
        let back = read_scope_csv(&buf[..], 1e7).unwrap();
        assert_eq!(back.samples.len(), 5);
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scope_rejects_bad_input() {
        assert!(read_scope_csv("0,0\n0,1\n".as_bytes(), 1e6).is_err());
        assert!(read_scope_csv("0,0\n".as_bytes(), 1e6).is_err());
        assert!(read_scope_csv("0,0\n1,x\n".as_bytes(), 1e6).is_err());
        assert!(read_scope_csv("0,0\n1,1\n".as_bytes(), 0.0).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(&vec![1, 2]), config_hash(&vec![1, 2]));
        assert_ne!(config_hash(&vec![1, 2]), config_hash(&vec![2, 1]));
        assert_eq!(config_hash(&()).len(), 64);
    }

    proptest! {
        #[test]
        fn float_cells_round_trip_exactly(v in proptest::collection::vec(-1e12f64..1e12, 1..20)) {
            let mut file = records();
            file.data.window_len = v.len();
            file.data.records = vec![RawRecord { ecu_id: "E".into(), channel_id: "C".into(), samples: v }];
            let mut buf = Vec::new();
            write_records(&mut buf, &file).unwrap();
            prop_assert_eq!(read_records(&buf[..]).unwrap(), file);
        }

        #[test]
        fn scope_reproduces_linear_signals(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 2usize..40) {
            let mut text = String::new();
            for i in 0..n {
                let t = i as f64 * 1e-7;
                text.push_str(&format!("{t},{}\n", a + b * t * 1e6));
            }
            let w = read_scope_csv(text.as_bytes(), 3e7).unwrap();
            for (i, s) in w.samples.iter().enumerate() {
                let t = i as f64 / 3e7;
                prop_assert!((s - (a + b * t * 1e6)).abs() < 1e-9);
            }
        }
    }
}
