//! Run configuration: defaults, overlaid by an optional JSON file, overlaid by
//! command-line flags. The merged value is what gets written to `config.json`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hkge::data::Split;
use hkge::hierarchy::DEFAULT_XI_SAMPLES;
use hkge::model::ModelConfig;
use hkge::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Split scored by `eval`.
    pub split: Split,
    pub per_relation: bool,
    /// `ablate`: sweep the four curvature modes instead of the component grid.
    pub curvature_sweep: bool,
    /// `analyze`: relation names; empty means all.
    pub relations: Vec<String>,
    /// `analyze`: triangle samples per relation.
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            dataset_dir: None,
            out_dir: None,
            checkpoint: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: Split::Valid,
            per_relation: false,
            curvature_sweep: false,
            relations: Vec::new(),
            samples: DEFAULT_XI_SAMPLES,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        let dir = self.dataset_dir.as_deref().context("--dataset-dir is required")?;
        anyhow::ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
        Ok(dir)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().context("--out-dir is required")
    }

    /// Creates `dir` and writes the resolved configuration into it.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("config.json"), self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
