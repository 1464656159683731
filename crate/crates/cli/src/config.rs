//! Flat configuration documents and run snapshots.
//!
//! A config file is a single flat JSON object whose keys mirror the
//! [`SynthConfig`] and [`TrainConfig`] field names one-to-one (structured
//! fields such as `teacher_bias` or `stage1_opt` keep their usual JSON
//! shape as the value). The same format doubles as the per-run snapshot:
//! every command writes the fully merged configuration it actually used, so
//! re-running with `--config <snapshot>` reproduces the run bit-for-bit.
//!
//! Precedence: built-in defaults < config file < command-line flags.

use std::path::Path;

use qdistill_core::pipeline::TrainConfig;
use qdistill_core::synth::SynthConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Keys that belong to neither config struct but to the sweep/ablation
/// drivers. They ride along in the same flat document.
#[derive(Debug, Clone, Default)]
pub struct Extras {
    /// Label-budget ratios for `sweep`.
    pub ratios: Option<Vec<f64>>,
    /// Number of repetition seeds (`0..seeds`) for `sweep` and `ablate`.
    pub seeds: Option<u64>,
    /// Ablation mode names for `ablate`.
    pub modes: Option<Vec<String>>,
}

const EXTRA_KEYS: [&str; 3] = ["ratios", "seeds", "modes"];

/// The merged state of a run's configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub extras: Extras,
}

impl RunConfig {
    pub fn with_defaults(synth: SynthConfig, train: TrainConfig) -> RunConfig {
        RunConfig {
            synth,
            train,
            extras: Extras::default(),
        }
    }

    /// Overlay the flat document at `path` onto the current state. Unknown
    /// keys are rejected so a typo cannot silently fall back to a default.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let doc: Value = qdistill_core::io::read_json(path).map_err(CliError::Core)?;
        let Value::Object(entries) = doc else {
            return Err(CliError::config(format!(
                "config file {} must contain a single JSON object",
                path.display()
            )));
        };

        let mut synth_map = to_map(&self.synth);
        let mut train_map = to_map(&self.train);
        for (key, value) in entries {
            let mut routed = false;
            if synth_map.contains_key(&key) {
                synth_map.insert(key.clone(), value.clone());
                routed = true;
            }
            if train_map.contains_key(&key) {
                train_map.insert(key.clone(), value.clone());
                routed = true;
            }
            if EXTRA_KEYS.contains(&key.as_str()) {
                match key.as_str() {
                    "ratios" => self.extras.ratios = Some(from_value(&key, value)?),
                    "seeds" => self.extras.seeds = Some(from_value(&key, value)?),
                    "modes" => self.extras.modes = Some(from_value(&key, value)?),
                    _ => unreachable!(),
                }
                routed = true;
            }
            if !routed {
                return Err(CliError::config(format!(
                    "unknown config key {key:?} in {}",
                    path.display()
                )));
            }
        }
        self.synth = from_map("synth", synth_map)?;
        self.train = from_map("train", train_map)?;
        Ok(())
    }

    /// Set the shared base seed on both halves.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    /// Render the flat snapshot document: every synth and train field plus
    /// whichever extras are set. Key order is alphabetical (serde_json maps
    /// are sorted), so the bytes are deterministic.
    pub fn snapshot(&self) -> Value {
        let mut flat = to_map(&self.synth);
        for (k, v) in to_map(&self.train) {
            flat.insert(k, v);
        }
        if let Some(r) = &self.extras.ratios {
            flat.insert("ratios".into(), serde_json::json!(r));
        }
        if let Some(s) = self.extras.seeds {
            flat.insert("seeds".into(), serde_json::json!(s));
        }
        if let Some(m) = &self.extras.modes {
            flat.insert("modes".into(), serde_json::json!(m));
        }
        Value::Object(flat)
    }

    /// Write the snapshot into `dir/config.json`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<(), CliError> {
        qdistill_core::io::write_json(&dir.join("config.json"), &self.snapshot())
            .map_err(CliError::Core)
    }
}

fn to_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

fn from_map<T: DeserializeOwned>(what: &str, map: Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::config(format!("invalid {what} config: {e}")))
}

fn from_value<T: DeserializeOwned>(key: &str, value: Value) -> Result<T, CliError> {
    serde_json::from_value(value)
        .map_err(|e| CliError::config(format!("invalid value for config key {key:?}: {e}")))
}
