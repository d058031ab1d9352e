//! Run configuration: one JSON document, unknown keys rejected, missing keys
//! defaulted.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use textclf::ingest::VocabSettings;
use textclf::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub vocab: VocabSettings,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Agnews,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Relative paths resolve against the config file's directory.
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    /// Stratified subset sizes; `null` uses the whole file.
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub subset_seed: u64,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Agnews,
            train_csv: PathBuf::from("data/ag_news_csv/train.csv"),
            test_csv: PathBuf::from("data/ag_news_csv/test.csv"),
            train_size: Some(8000),
            test_size: Some(2000),
            subset_seed: 0,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            train_per_class: 100,
            test_per_class: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub hidden_dims: Vec<usize>,
    pub ratios: Vec<usize>,
    pub positive_class: usize,
    pub seeds: u64,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![16, 32, 64, 128],
            ratios: vec![1, 2, 3, 4, 5, 6],
            positive_class: 0,
            seeds: 5,
            workers: 1,
        }
    }
}

impl RunConfig {
    /// Parses `path` and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.train_csv, &mut config.data.test_csv] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.train.validate()?;
        Ok(config)
    }

    /// SHA-256 of the effective configuration serialized as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file =
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}
