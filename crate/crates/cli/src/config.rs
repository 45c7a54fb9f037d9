//! TOML run configuration with full defaulting and `section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use zsd_core::experiment::{ExperimentConfig, DEFAULT_IOU_THRESHOLDS};
use zsd_core::inference::InferenceConfig;
use zsd_core::model::ModelConfig;
use zsd_core::synthdata::SynthConfig;
use zsd_core::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Generated dataset and embedding files.
    pub data_dir: PathBuf,
    /// Training logs, checkpoints, reports and sweep tables.
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Threshold used for sweep tables and console summaries.
    pub primary_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
            primary_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl EvalConfig {
    /// `primary_iou` followed by the remaining thresholds, without repeats.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t = vec![self.primary_iou];
        t.extend(self.iou_thresholds.iter().filter(|&&v| v != self.primary_iou));
        t
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            synth: self.synth.clone(),
            model: self.model.clone(),
            trainer: self.trainer.clone(),
            inference: self.inference.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Applies `section.key=value` assignments. Values are read as TOML
    /// literals, falling back to plain strings.
    pub fn apply_overrides(&mut self, assignments: &[String]) -> Result<()> {
        if assignments.is_empty() {
            return Ok(());
        }
        let mut tree = toml::Table::try_from(&*self)?;
        for a in assignments {
            let (key, raw) = a
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{a}` is not of the form section.key=value"))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            if path.len() != 2 {
                bail!("override key `{key}` must be section.key");
            }
            let value = parse_value(raw.trim());
            let section = tree
                .get_mut(path[0])
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| anyhow!("unknown config section `{}`", path[0]))?;
            if !section.contains_key(path[1]) {
                bail!("unknown config key `{key}`");
            }
            section.insert(path[1].to_string(), value);
        }
        *self = tree.try_into().context("applying overrides")?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
