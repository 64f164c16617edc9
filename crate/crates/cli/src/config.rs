use std::path::{Path, PathBuf};

use pigvae::graph::DatasetSpec;
use pigvae::model::ModelConfig;
use pigvae::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SNAPSHOT_FILE: &str = "run_config.json";

/// Dataset generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub spec: DatasetSpec,
    pub n_min: usize,
    pub n_max: usize,
    pub count: usize,
    pub seed: u64,
}

/// Evaluation parameters shared by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub experiment: Option<String>,
    pub checkpoints: Vec<PathBuf>,
    /// Use at most this many graphs of the dataset.
    pub limit: Option<usize>,
    pub seed: u64,
    pub permutations: usize,
    pub max_edits: usize,
    pub replicates: usize,
    pub steps: usize,
    pub pairs: usize,
    pub folds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            checkpoints: Vec::new(),
            limit: None,
            seed: 0,
            permutations: 5,
            max_edits: 10,
            replicates: 20,
            steps: 8,
            pairs: 50,
            folds: 5,
        }
    }
}

/// Everything a command needs; written next to its outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: Option<DataConfig>,
    pub eval: EvalConfig,
    /// Input dataset.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn base(path: Option<&Path>, command: &str) -> Result<Self, Failure> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.command = command.to_string();
        Ok(cfg)
    }

    pub fn out(&self) -> Result<&Path, Failure> {
        self.out.as_deref().ok_or_else(|| Failure::usage("--out is required"))
    }

    pub fn data(&self) -> Result<&Path, Failure> {
        self.data.as_deref().ok_or_else(|| Failure::usage("--data is required"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }
}

/// `Some(v)` overrides the field.
pub fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}
