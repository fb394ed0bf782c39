//! The single JSON document that configures every pipeline stage.

use std::path::Path;

use afg_core::corpus::SynthConfig;
use afg_core::labeling::LabelConfig;
use afg_core::model::ModelConfig;
use afg_core::pseudo::SimulatorConfig;
use afg_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, IoError};

/// Every section is optional in the file and falls back to its defaults;
/// unknown keys at any level are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub simulator: SimulatorConfig,
    pub label: LabelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

/// File names inside a stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: String,
    pub dev: String,
    pub test: String,
    pub world: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: "train.jsonl".into(),
            dev: "dev.jsonl".into(),
            test: "test.jsonl".into(),
            world: "world.json".into(),
        }
    }
}

impl Paths {
    pub fn split(&self, name: &str) -> Option<&str> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    /// Checks every section. The model section is checked when the model is
    /// built, since its vocabulary size comes from the data.
    pub fn validate(&self) -> afg_core::Result<()> {
        self.synth.validate()?;
        self.simulator.validate()?;
        self.label.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
