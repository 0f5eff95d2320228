//! Run configuration file.
//!
//! ```json
//! {
//!   "synth": { "n": 20000, "delay_family": "normal" },
//!   "train": { "common": { "batch_size": 512 }, "dfm": { "learning_rate": 0.005 } },
//!   "experiment": { "l_values": [0.5, 1, 2, 4], "seeds": 10, "methods": ["oracle", "nn-dla"] }
//! }
//! ```
//!
//! Every section and key is optional and unknown keys are rejected. Per-method
//! `train` entries are layered over `common`, which is layered over the
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use dladf::eval::{ExperimentGrid, MethodId};
use dladf::synthgen::SynthConfig;
use dladf::trainers::TrainConfig;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub synth: SynthConfig,
    pub train: Map<String, Value>,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    /// Seeds `1..=k`.
    Count(u64),
    List(Vec<u64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub l_values: Vec<f64>,
    pub seeds: Seeds,
    pub methods: Vec<MethodId>,
    pub cells_csv: String,
    pub aggregates_csv: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            l_values: vec![0.5, 1.0, 2.0, 4.0],
            seeds: Seeds::Count(10),
            methods: vec![MethodId::Oracle, MethodId::Naive, MethodId::Dfm, MethodId::NnDla],
            cells_csv: "cells.csv".into(),
            aggregates_csv: "aggregates.csv".into(),
        }
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(k) => (1..=*k).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

impl RunConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.check_train_keys()?;
        Ok(cfg)
    }

    fn check_train_keys(&self) -> Result<(), CliError> {
        for key in self.train.keys() {
            if key != "common" && key.parse::<MethodId>().is_err() {
                return Err(CliError::config(format!(
                    "unknown train section `{key}` (expected `common` or a method id)"
                )));
            }
        }
        for m in MethodId::ALL {
            self.train_config(m)?;
        }
        Ok(())
    }

    /// `common` then the method's own section, over the defaults.
    pub fn train_config(&self, method: MethodId) -> Result<TrainConfig, CliError> {
        let mut merged = Map::new();
        for key in ["common", method.as_str()] {
            match self.train.get(key) {
                Some(Value::Object(obj)) => {
                    merged.extend(obj.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
                Some(_) => return Err(CliError::config(format!("train.{key} must be an object"))),
                None => {}
            }
        }
        let cfg: TrainConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::config(format!("train config for {method}: {e}")))?;
        cfg.validate().map_err(CliError::from_config)?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<ExperimentGrid, CliError> {
        let exp = &self.experiment;
        let mut grid = ExperimentGrid::new(
            self.synth.clone(),
            exp.l_values.clone(),
            exp.seeds.to_vec(),
            exp.methods.clone(),
        );
        let train: BTreeMap<MethodId, TrainConfig> = exp
            .methods
            .iter()
            .map(|&m| Ok((m, self.train_config(m)?)))
            .collect::<Result<_, CliError>>()?;
        grid.train = train;
        grid.validate().map_err(CliError::from_config)?;
        Ok(grid)
    }
}
