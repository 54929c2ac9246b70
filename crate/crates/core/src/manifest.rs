//! Versioned JSON manifest describing a full run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channelsim::{CableFamily, SimConfig};
use crate::evalkit::{DEFAULT_THRESHOLD, DEFAULT_TRAIN_FRAC};
use crate::featsel::DEFAULT_BINS;
use crate::formats::{Task, SCHEMA};
use crate::mlp::TrainConfig;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(String),
    #[error("manifest field `schema` is missing")]
    MissingSchema,
    #[error("unsupported manifest schema {0} (expected {SCHEMA})")]
    Schema(String),
    #[error("manifest field `{path}`: {msg}")]
    Field { path: String, msg: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: DEFAULT_TRAIN_FRAC,
            stratified: true,
        }
    }
}

/// Classifier settings for one task. Rows are restricted to the listed ECUs
/// and channels when those lists are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub ecus: Option<Vec<String>>,
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TaskConfig {
    pub fn default_channel() -> Self {
        Self {
            hidden: vec![50, 40, 40],
            ecus: Some(vec!["E1".into()]),
            channels: Some(
                crate::channelsim::STANDARD_LENGTHS_M
                    .iter()
                    .map(|&l| crate::channelsim::ChannelProfile::standard(CableFamily::Gxl, l).channel_id)
                    .collect(),
            ),
            train: TrainConfig::default(),
        }
    }

    pub fn default_ecu() -> Self {
        Self {
            hidden: vec![20],
            ecus: None,
            channels: Some(vec![
                crate::channelsim::ChannelProfile::standard(CableFamily::Candata, 2.0).channel_id,
            ]),
            train: TrainConfig::default(),
        }
    }

    pub fn keeps(&self, ecu_id: &str, channel_id: &str) -> bool {
        self.ecus.as_ref().is_none_or(|l| l.iter().any(|e| e == ecu_id))
            && self.channels.as_ref().is_none_or(|l| l.iter().any(|c| c == channel_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksConfig {
    #[serde(default = "TaskConfig::default_channel")]
    pub channel: TaskConfig,
    #[serde(default = "TaskConfig::default_ecu")]
    pub ecu: TaskConfig,
}

impl Default for TasksConfig {
    fn default() -> Self {
        Self {
            channel: TaskConfig::default_channel(),
            ecu: TaskConfig::default_ecu(),
        }
    }
}

impl TasksConfig {
    pub fn get(&self, task: Task) -> &TaskConfig {
        match task {
            Task::Channel => &self.channel,
            Task::Ecu => &self.ecu,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut TaskConfig {
        match task {
            Task::Channel => &mut self.channel,
            Task::Ecu => &mut self.ecu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub threshold: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Output directory, relative paths resolve against the manifest's directory.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: u32,
    #[serde(default = "SimConfig::default_bench")]
    pub sim: SimConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub tasks: TasksConfig,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            sim: SimConfig::default_bench(),
            features: FeatureConfig::default(),
            split: SplitConfig::default(),
            tasks: TasksConfig::default(),
            identify: IdentifyConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn field(path: &str, msg: impl Into<String>) -> ManifestError {
    ManifestError::Field {
        path: path.into(),
        msg: msg.into(),
    }
}

impl Manifest {
    /// Small configuration for quick end-to-end runs.
    pub fn smoke() -> Self {
        let mut m = Self::default();
        m.sim.records_per_class = 10;
        for task in [Task::Channel, Task::Ecu] {
            m.tasks.get_mut(task).train.max_epochs = 50;
        }
        m
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ManifestError::Json(e.to_string()))?;
        match value.get("schema") {
            None => return Err(ManifestError::MissingSchema),
            Some(v) if v.as_u64() != Some(SCHEMA as u64) => return Err(ManifestError::Schema(v.to_string())),
            _ => {}
        }
        let m: Manifest = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            field(&path, e.into_inner().to_string())
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        self.sim.validate().map_err(|e| field("sim", e.to_string()))?;
        if self.features.bins < 2 {
            return Err(field("features.bins", "must be at least 2"));
        }
        let f = self.split.train_frac;
        if !(f > 0.0 && f < 1.0) {
            return Err(field("split.train_frac", format!("{f} must lie strictly between 0 and 1")));
        }
        let t = self.identify.threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(field("identify.threshold", format!("{t} must lie in [0, 1]")));
        }
        for task in [Task::Channel, Task::Ecu] {
            let name = task.as_str();
            let tc = self.tasks.get(task);
            if tc.hidden.contains(&0) {
                return Err(field(&format!("tasks.{name}.hidden"), "layer sizes must be positive"));
            }
            tc.train
                .validate()
                .map_err(|e| field(&format!("tasks.{name}.train"), e.to_string()))?;
            if let Some(ecus) = &tc.ecus {
                for e in ecus {
                    if !self.sim.ecus.iter().any(|p| &p.ecu_id == e) {
                        return Err(field(&format!("tasks.{name}.ecus"), format!("unknown ECU {e:?}")));
                    }
                }
            }
            if let Some(chs) = &tc.channels {
                for c in chs {
                    if !self.sim.channels.iter().any(|p| &p.channel_id == c) {
                        return Err(field(&format!("tasks.{name}.channels"), format!("unknown channel {c:?}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let m = Manifest::default();
        assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), m);
        assert_eq!(m.sim.channels.len(), 18);
        assert_eq!(m.sim.ecus.len(), 4);
        assert_eq!(m.tasks.channel.train.max_epochs, 2000);
        assert_eq!(m.tasks.channel.train.grad_tol, 1e-7);
    }

    #[test]
    fn minimal_manifest_uses_defaults() {
        let m = Manifest::from_json(r#"{"schema": 1}"#).unwrap();
        assert_eq!(m, Manifest::default());
    }

    #[test]
    fn schema_checked_first() {
        assert!(matches!(Manifest::from_json(r#"{"schema": 2}"#), Err(ManifestError::Schema(_))));
        assert!(matches!(Manifest::from_json(r#"{}"#), Err(ManifestError::MissingSchema)));
        assert!(matches!(Manifest::from_json("nope"), Err(ManifestError::Json(_))));
    }

    #[test]
    fn errors_name_the_field() {
        let err = Manifest::from_json(r#"{"schema": 1, "sim": {"records_per_class": "many"}}"#).unwrap_err();
        assert!(err.to_string().contains("sim.records_per_class"), "{err}");
        let err = Manifest::from_json(r#"{"schema": 1, "split": {"train_frac": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("split.train_frac"), "{err}");
        let err = Manifest::from_json(r#"{"schema": 1, "tasks": {"ecu": {"hidden": [20], "channels": ["nowhere"]}}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("tasks.ecu.channels"), "{err}");
        let err = Manifest::from_json(r#"{"schema": 1, "bogus": true}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn task_filters() {
        let m = Manifest::default();
        assert!(m.tasks.channel.keeps("E1", "GXL-2m"));
        assert!(!m.tasks.channel.keeps("E2", "GXL-2m"));
        assert!(!m.tasks.channel.keeps("E1", "TXL-2m"));
        assert!(m.tasks.ecu.keeps("E3", "CANDATA-2m"));
        assert!(m.tasks.channel.channels.as_ref().unwrap().len() == 6);
    }
}
