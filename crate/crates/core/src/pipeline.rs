//! End-to-end stages: simulate, extract, rank, train, evaluate, identify.
//!
//! Each stage consumes the previous stage's artifact and produces its own,
//! tagged with the seed and a configuration hash. No stage reads the clock or
//! the environment, so equal inputs give byte-identical outputs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channelsim::{generate_dataset, SimConfig, SimError};
use crate::dataset::LabeledDataset;
use crate::evalkit::{self, ConfusionReport, EvalError, ReportFormat, SplitIndices, Verdict};
use crate::featsel::{self, SelectError};
use crate::features::{extract_samples, FeatureError, FEATURE_COUNT, FEATURE_NAMES};
use crate::formats::{
    self, config_hash, FeatureRow, FeaturesFile, FormatError, Provenance, RecordsFile, Task, SCHEMA,
};
use crate::manifest::{Manifest, ManifestError, SplitConfig, TaskConfig};
use crate::mlp::{self, Activation, MlpError, MlpModel, NormParams, TrainTrace, TrainingMeta};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{context}: {source}")]
    Format {
        context: String,
        #[source]
        source: FormatError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 configuration or schema, 5 numeric, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Manifest(ManifestError::Io { .. }) | PipelineError::Io { .. } => 1,
            PipelineError::Format { source, .. } if !source.is_schema() => 1,
            PipelineError::Numeric(_) => 5,
            _ => 2,
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        PipelineError::Numeric(e.to_string())
    }
}

impl From<SelectError> for PipelineError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<MlpError> for PipelineError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            MlpError::Shape(_) => PipelineError::Schema(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-class record counts and the effective simulation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub schema: u32,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub total_records: usize,
    pub ecu_classes: usize,
    pub channel_classes: usize,
    pub classes: Vec<ClassCount>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub ecu: String,
    pub channel: String,
    pub records: usize,
}

pub fn simulate(sim: &SimConfig) -> Result<(RecordsFile, DatasetSummary), PipelineError> {
    let data = generate_dataset(sim)?;
    let provenance = Provenance {
        seed: sim.rng_seed,
        config_hash: config_hash(sim),
    };
    let summary = DatasetSummary {
        schema: SCHEMA,
        kind: "dataset_summary".into(),
        seed: sim.rng_seed,
        config_hash: provenance.config_hash.clone(),
        sample_rate_hz: data.sample_rate_hz,
        window_len: data.window_len,
        total_records: data.records.len(),
        ecu_classes: sim.ecus.len(),
        channel_classes: sim.channels.len(),
        classes: data
            .class_counts()
            .into_iter()
            .map(|((ecu, channel), records)| ClassCount { ecu, channel, records })
            .collect(),
        config: sim.clone(),
    };
    Ok((RecordsFile { provenance, data }, summary))
}

pub fn extract_features(records: &RecordsFile) -> Result<FeaturesFile, PipelineError> {
    let fs = records.data.sample_rate_hz;
    let rows = records
        .data
        .records
        .par_iter()
        .map(|r| {
            let e = extract_samples(&r.samples, fs)?;
            Ok(FeatureRow {
                ecu_id: r.ecu_id.clone(),
                channel_id: r.channel_id.clone(),
                features: e.vector.to_array(),
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(FeaturesFile {
        provenance: Provenance {
            seed: records.provenance.seed,
            config_hash: config_hash(&("extract", &records.provenance.config_hash)),
        },
        rows,
    })
}

/// Digest of a features file's serialized content.
pub fn features_digest(file: &FeaturesFile) -> String {
    let mut buf = Vec::new();
    formats::write_features(&mut buf, file).expect("in-memory write");
    sha256_hex(&buf)
}

/// Rows kept by the task filters, labelled by class index. Class names follow
/// first appearance unless `class_names` is given.
pub fn task_dataset(
    features: &FeaturesFile,
    task: Task,
    tc: &TaskConfig,
    class_names: Option<&[String]>,
) -> Result<LabeledDataset, PipelineError> {
    let kept = FeaturesFile {
        provenance: features.provenance.clone(),
        rows: features
            .rows
            .iter()
            .filter(|r| tc.keeps(&r.ecu_id, &r.channel_id))
            .cloned()
            .collect(),
    };
    if kept.rows.is_empty() {
        return Err(PipelineError::Config(format!(
            "no feature rows match the {} task filters",
            task.as_str()
        )));
    }
    let names = match class_names {
        Some(n) => n.to_vec(),
        None => kept.class_names(task),
    };
    kept.to_labeled(task, &names).map_err(|e| PipelineError::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingDoc {
    pub schema: u32,
    pub kind: String,
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    pub features_digest: String,
    pub bins: usize,
    pub k: usize,
    pub selected: Vec<RankedFeature>,
}

pub fn rank(
    features: &FeaturesFile,
    task: Task,
    tc: &TaskConfig,
    k: usize,
    bins: usize,
) -> Result<RankingDoc, PipelineError> {
    let ds = task_dataset(features, task, tc, None)?;
    let disc = featsel::discretize(&ds.x, bins)?;
    let result = featsel::jmi_rank(&disc, &ds.y, k)?;
    let selected = result
        .order
        .iter()
        .zip(&result.scores)
        .enumerate()
        .map(|(i, (&f, &score))| RankedFeature {
            rank: i + 1,
            feature: FEATURE_NAMES[f].to_string(),
            score,
        })
        .collect();
    let digest = features_digest(features);
    Ok(RankingDoc {
        schema: SCHEMA,
        kind: "ranking".into(),
        task,
        seed: features.provenance.seed,
        config_hash: config_hash(&("rank", &digest, task, tc, k, bins)),
        features_digest: digest,
        bins,
        k,
        selected,
    })
}

/// Trained classifier plus everything needed to reproduce its split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub schema: u32,
    pub kind: String,
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    pub features_digest: String,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub split: SplitConfig,
    pub task_config: TaskConfig,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Per layer, `out x in`, row-major.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub norm_params: NormParams,
    pub training: TrainingMeta,
}

impl ModelDoc {
    pub fn model(&self) -> Result<MlpModel, PipelineError> {
        if self.schema != SCHEMA {
            return Err(PipelineError::Schema(format!("model schema {} (expected {SCHEMA})", self.schema)));
        }
        if self.kind != "model" {
            return Err(PipelineError::Schema(format!("expected a model document, found kind {}", self.kind)));
        }
        if self.hidden_activation != Activation::Tanh || self.output_activation != Activation::Softmax {
            return Err(PipelineError::Schema("only tanh hidden and softmax output layers are supported".into()));
        }
        if self.layer_sizes.first() != Some(&FEATURE_COUNT) {
            return Err(PipelineError::Schema(format!("model input must have {FEATURE_COUNT} features")));
        }
        if self.layer_sizes.last() != Some(&self.class_names.len()) {
            return Err(PipelineError::Schema("output size does not match class_names".into()));
        }
        let mut m = MlpModel::from_layers(&self.layer_sizes, &self.weights, &self.biases, self.norm_params.clone())?;
        m.training = Some(self.training.clone());
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: ModelDoc = serde_path_to_error::deserialize(de)
            .map_err(|e| PipelineError::Schema(format!("model field `{}`: {}", e.path(), e.inner())))?;
        doc.model()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn class_index(&self, name: &str) -> Result<usize, PipelineError> {
        self.class_names.iter().position(|c| c == name).ok_or_else(|| {
            PipelineError::Config(format!(
                "claimed class {name:?} is not one of {:?}",
                self.class_names
            ))
        })
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serializes");
    s.push('\n');
    s
}

fn split_for(ds: &LabeledDataset, split: &SplitConfig, seed: u64) -> Result<SplitIndices, PipelineError> {
    Ok(evalkit::split_indices(ds, split.train_frac, seed, split.stratified)?)
}

/// Splits the task rows and trains a classifier on the training part.
pub fn train(
    features: &FeaturesFile,
    task: Task,
    tc: &TaskConfig,
    split: &SplitConfig,
) -> Result<(ModelDoc, TrainTrace), PipelineError> {
    let seed = tc.train.rng_seed;
    let ds = task_dataset(features, task, tc, None)?;
    if ds.n_classes() < 2 {
        return Err(PipelineError::Config(format!(
            "{} task needs at least two classes, found {:?}",
            task.as_str(),
            ds.class_names
        )));
    }
    let idx = split_for(&ds, split, seed)?;
    let train_set = ds.subset(&idx.train);
    let mut sizes = vec![FEATURE_COUNT];
    sizes.extend(&tc.hidden);
    sizes.push(ds.n_classes());
    let (model, trace) = mlp::fit(&sizes, &train_set, &tc.train)?;
    let digest = features_digest(features);
    let doc = ModelDoc {
        schema: SCHEMA,
        kind: "model".into(),
        task,
        seed,
        config_hash: config_hash(&("train", &digest, task, tc, split)),
        features_digest: digest,
        class_names: ds.class_names.clone(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        split: split.clone(),
        task_config: tc.clone(),
        layer_sizes: sizes,
        hidden_activation: model.hidden_activation(),
        output_activation: model.output_activation(),
        weights: model.weight_rows(),
        biases: model.bias_rows(),
        norm_params: model.norm.clone(),
        training: model.training.clone().expect("trained model carries metadata"),
    };
    Ok((doc, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// The held-out rows of the split the model was trained with.
    HeldOut,
    /// Every matching row of a features file the model was not trained on.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub schema: u32,
    pub kind: String,
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    pub model_digest: String,
    pub features_digest: String,
    pub scope: EvalScope,
    pub test: ConfusionReport,
    pub train: Option<ConfusionReport>,
    #[serde(skip)]
    pub test_matrix: evalkit::ConfusionMatrix,
    #[serde(skip)]
    pub train_matrix: Option<evalkit::ConfusionMatrix>,
}

impl EvalDoc {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => to_json(self),
            ReportFormat::Csv => evalkit::render_report(&self.test_matrix, ReportFormat::Csv),
            ReportFormat::Text => {
                let scope = match self.scope {
                    EvalScope::HeldOut => "held-out test split",
                    EvalScope::All => "all rows",
                };
                let mut out = format!(
                    "task: {}\nseed: {}\nconfig_hash: {}\nrows = predicted class, columns = target class\n\n[test: {scope}]\n",
                    self.task.as_str(),
                    self.seed,
                    self.config_hash
                );
                out.push_str(&evalkit::render_report(&self.test_matrix, ReportFormat::Text));
                if let Some(train) = &self.train_matrix {
                    out.push_str("\n[train]\n");
                    out.push_str(&evalkit::render_report(train, ReportFormat::Text));
                }
                out
            }
        }
    }
}

/// Evaluates on the held-out split when `features` is the file the model was
/// trained from, otherwise on every matching row.
pub fn evaluate(doc: &ModelDoc, features: &FeaturesFile) -> Result<EvalDoc, PipelineError> {
    let model = doc.model()?;
    let ds = task_dataset(features, doc.task, &doc.task_config, Some(&doc.class_names))?;
    let digest = features_digest(features);
    let (scope, test_matrix, train_matrix) = if digest == doc.features_digest {
        let idx = split_for(&ds, &doc.split, doc.seed)?;
        let test = evalkit::evaluate(&model, &ds.subset(&idx.test))?;
        let train = evalkit::evaluate(&model, &ds.subset(&idx.train))?;
        (EvalScope::HeldOut, test, Some(train))
    } else {
        (EvalScope::All, evalkit::evaluate(&model, &ds)?, None)
    };
    let model_digest = doc.digest();
    Ok(EvalDoc {
        schema: SCHEMA,
        kind: "evaluation".into(),
        task: doc.task,
        seed: doc.seed,
        config_hash: config_hash(&("eval", &model_digest, &digest)),
        model_digest,
        features_digest: digest,
        scope,
        test: ConfusionReport::from(&test_matrix),
        train: train_matrix.as_ref().map(ConfusionReport::from),
        test_matrix,
        train_matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDoc {
    pub schema: u32,
    pub kind: String,
    pub task: Task,
    pub model_digest: String,
    pub claimed: String,
    pub predicted: String,
    pub confidence: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Checks one feature vector against the claimed class name.
pub fn identify(doc: &ModelDoc, features: &[f64], claimed: &str, threshold: f64) -> Result<VerdictDoc, PipelineError> {
    let model = doc.model()?;
    let claimed_idx = doc.class_index(claimed)?;
    let v = evalkit::identify(&model, features, claimed_idx, threshold)?;
    Ok(VerdictDoc {
        schema: SCHEMA,
        kind: "verdict".into(),
        task: doc.task,
        model_digest: doc.digest(),
        claimed: claimed.to_string(),
        predicted: doc.class_names[v.predicted_class].clone(),
        confidence: v.confidence,
        threshold,
        verdict: v.verdict,
    })
}

/// Feature vector of a raw window.
pub fn features_of_window(samples: &[f64], sample_rate_hz: f64) -> Result<Vec<f64>, PipelineError> {
    Ok(extract_samples(samples, sample_rate_hz)?.vector.to_array().to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_records_file(path: &Path, file: &RecordsFile) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    formats::write_records(&mut buf, file).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_file(path, &buf)
}

pub fn write_features_file(path: &Path, file: &FeaturesFile) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    formats::write_features(&mut buf, file).expect("in-memory write");
    write_file(path, &buf)
}

pub fn write_trace_file(path: &Path, doc: &ModelDoc, trace: &TrainTrace) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    let provenance = Provenance {
        seed: doc.seed,
        config_hash: doc.config_hash.clone(),
    };
    formats::write_trace(&mut buf, &provenance, trace).expect("in-memory write");
    write_file(path, &buf)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_file(path, text.as_bytes())
}

fn open(path: &Path) -> Result<std::fs::File, PipelineError> {
    std::fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> PipelineError + '_ {
    move |source| PipelineError::Format {
        context: path.display().to_string(),
        source,
    }
}

pub fn read_records_file(path: &Path) -> Result<RecordsFile, PipelineError> {
    formats::read_records(std::io::BufReader::new(open(path)?)).map_err(format_err(path))
}

pub fn read_features_file(path: &Path) -> Result<FeaturesFile, PipelineError> {
    formats::read_features(std::io::BufReader::new(open(path)?)).map_err(format_err(path))
}

pub fn read_model_file(path: &Path) -> Result<ModelDoc, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelDoc::from_json(&text)
}

/// Artifact file names written by [`run_pipeline`], relative to the output directory.
pub fn pipeline_artifacts() -> Vec<String> {
    let mut names = vec![
        "manifest.json".to_string(),
        "records.csv".into(),
        "summary.json".into(),
        "features.csv".into(),
    ];
    for task in ["channel", "ecu"] {
        for stem in ["ranking_{}.json", "model_{}.json", "trace_{}.csv", "eval_{}.json", "eval_{}.txt", "confusion_{}.csv"] {
            names.push(stem.replace("{}", task));
        }
    }
    names
}

/// Runs every stage for both tasks and writes all artifacts into `out_dir`.
pub fn run_pipeline(manifest: &Manifest, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    manifest.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), PipelineError> {
        let p = out_dir.join(name);
        write_file(&p, bytes)?;
        written.push(p);
        Ok(())
    };

    put("manifest.json", manifest.to_json().as_bytes())?;
    let (records, summary) = simulate(&manifest.sim)?;
    let mut buf = Vec::new();
    formats::write_records(&mut buf, &records).map_err(|e| PipelineError::Config(e.to_string()))?;
    put("records.csv", &buf)?;
    put("summary.json", to_json(&summary).as_bytes())?;

    let features = extract_features(&records)?;
    buf.clear();
    formats::write_features(&mut buf, &features).expect("in-memory write");
    put("features.csv", &buf)?;

    for task in [Task::Channel, Task::Ecu] {
        let name = task.as_str();
        let tc = manifest.tasks.get(task);
        let ranking = rank(&features, task, tc, FEATURE_COUNT, manifest.features.bins)?;
        put(&format!("ranking_{name}.json"), to_json(&ranking).as_bytes())?;

        let (doc, trace) = train(&features, task, tc, &manifest.split)?;
        put(&format!("model_{name}.json"), doc.to_json().as_bytes())?;
        buf.clear();
        let provenance = Provenance {
            seed: doc.seed,
            config_hash: doc.config_hash.clone(),
        };
        formats::write_trace(&mut buf, &provenance, &trace).expect("in-memory write");
        put(&format!("trace_{name}.csv"), &buf)?;

        let eval = evaluate(&doc, &features)?;
        put(&format!("eval_{name}.json"), eval.render(ReportFormat::Json).as_bytes())?;
        put(&format!("eval_{name}.txt"), eval.render(ReportFormat::Text).as_bytes())?;
        put(&format!("confusion_{name}.csv"), eval.render(ReportFormat::Csv).as_bytes())?;
    }
    Ok(written)
}

/// Overrides every seed in the manifest.
pub fn apply_seed(manifest: &mut Manifest, seed: u64) {
    manifest.sim.rng_seed = seed;
    manifest.tasks.channel.train.rng_seed = seed;
    manifest.tasks.ecu.train.rng_seed = seed;
}
