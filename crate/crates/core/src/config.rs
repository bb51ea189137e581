//! Experiment configuration as flat dotted keys, e.g. `model.hidden_dim`.
//!
//! A config file is a JSON object mapping dotted keys to values. Keys absent
//! from the file keep their defaults; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::split::SplitMode;
pub use crate::synth::Setting;
use crate::synth::GeneratorConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub train_frac: f64,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::Pl,
            train_frac: 0.7,
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub setting: Setting,
    /// Tokens seen fewer times in the training split map to `[UNK]`.
    pub min_frequency: usize,
    pub evidence_negatives: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            setting: Setting::Sentence,
            min_frequency: 2,
            evidence_negatives: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub data: DataConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            data: DataConfig::default(),
            seeds: vec![1, 2, 3],
        }
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten_into("", v, &mut out);
    out
}

pub fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys never collide with leaves");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// Parses an override value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        flatten(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_value(unflatten(flat))
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` pairs on top of this config.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut flat = self.to_flat();
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_key(&mut flat, k.trim(), parse_value(v.trim()))?;
        }
        Self::from_flat(&flat)
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut flat = Self::default().to_flat();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let obj = file
                .as_object()
                .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", p.display())))?;
            for (k, v) in obj {
                set_key(&mut flat, k, v.clone())?;
            }
        }
        Self::from_flat(&flat)?.with_overrides(overrides)
    }

    /// Flat JSON, one dotted key per line.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.num_notes == 0 {
            return Err(Error::Config("generator.num_notes must be positive".into()));
        }
        if !(self.split.train_frac > 0.0 && self.split.train_frac < 1.0) {
            return Err(Error::Config(format!("split.train_frac {} must lie in (0, 1)", self.split.train_frac)));
        }
        if self.data.min_frequency == 0 {
            return Err(Error::Config("data.min_frequency must be at least 1".into()));
        }
        Ok(())
    }
}

fn set_key(flat: &mut BTreeMap<String, Value>, key: &str, value: Value) -> Result<()> {
    match flat.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(Error::Config(format!("unknown configuration key `{key}`"))),
    }
}
