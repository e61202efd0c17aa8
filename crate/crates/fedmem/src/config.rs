//! Experiment configuration: a strict JSON schema with defaults matching
//! the reference hyperparameters, cross-field validation up front, and
//! helpers to realize per-run seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, NoiseSpec};
use crate::partition::{DropoutSchedule, Monopoly, PartitionMode, PartitionSpec};
use crate::personalize::PersonalizationConfig;
use crate::protocol::{Strategy, TrainingConfig};
use crate::rng;

/// Where the raw labelled data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs, one per class.
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        /// Defaults to the master seed, keeping geometry constant across
        /// repeats.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout_seed: Option<u64>,
        /// Defaults to the per-repeat run seed, giving each repeat fresh
        /// draws around the same means.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_seed: Option<u64>,
    },
    /// Labelled rows loaded from a CSV file.
    Csv { path: PathBuf },
}

/// Partition settings; the seed is optional and derived per repeat when
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    pub num_clients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monopoly: Option<Monopoly>,
}

impl PartitionConfig {
    /// Concrete spec for one run, deriving the seed when unset.
    pub fn realize(&self, run_seed: u64) -> PartitionSpec {
        PartitionSpec {
            mode: self.mode.clone(),
            num_clients: self.num_clients,
            seed: self
                .seed
                .unwrap_or_else(|| rng::derive_seed(run_seed, &[rng::tag("partition")])),
            monopoly: self.monopoly.clone(),
        }
    }
}

/// How the per-class semantic embeddings are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    /// Per-class means of the training features (the stored blob means
    /// when available, otherwise empirical means).
    #[default]
    Means,
    /// Class means pushed through a seeded random projection.
    Projected { dim: usize },
    /// Embeddings loaded from a JSON file; its seen/unseen lists override
    /// the run's own split, so classes listed there must match the data.
    File { path: PathBuf },
}

impl EmbeddingSpec {
    /// Parse a sweep value: `means`, `projected:<dim>`, or a JSON path.
    pub fn parse_sweep_value(value: &str) -> Result<Self> {
        if value == "means" {
            return Ok(EmbeddingSpec::Means);
        }
        if let Some(dim) = value.strip_prefix("projected:") {
            let dim: usize = dim.parse().map_err(|_| {
                Error::config(format!("embedding value {value:?}: dim must be an integer"))
            })?;
            return Ok(EmbeddingSpec::Projected { dim });
        }
        if value.ends_with(".json") {
            return Ok(EmbeddingSpec::File { path: PathBuf::from(value) });
        }
        Err(Error::config(format!(
            "embedding value {value:?} must be \"means\", \"projected:<dim>\", or a .json path"
        )))
    }
}

fn default_repeats() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_hidden() -> Vec<usize> {
    crate::protocol::DEFAULT_HIDDEN.to_vec()
}

/// Top-level experiment description. Unknown keys anywhere in the document
/// are hard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionConfig,
    pub strategies: Vec<Strategy>,
    pub master_seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Hidden layer widths of every classifier (clients, global, friend).
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: DropoutSchedule,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub personalization: PersonalizationConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub embeddings: EmbeddingSpec,
}

impl ExperimentConfig {
    /// Number of classes when it is statically known (blobs).
    pub fn static_num_classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSpec::Blobs { classes, .. } => Some(*classes),
            DatasetSpec::Csv { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Blobs { classes, dim, per_class, spread, .. } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes: need at least 2"));
                }
                if *dim == 0 {
                    return Err(Error::config("dataset.dim: must be positive"));
                }
                if *per_class < 2 {
                    return Err(Error::config(
                        "dataset.per_class: need at least 2 rows per class",
                    ));
                }
                if !(*spread > 0.0) || !spread.is_finite() {
                    return Err(Error::config(
                        "dataset.spread: must be positive and finite",
                    ));
                }
            }
            DatasetSpec::Csv { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("dataset.path: must not be empty"));
                }
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies: need at least one"));
        }
        let mut names: Vec<&str> = self.strategies.iter().map(Strategy::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(
                "strategies: each strategy may appear at most once",
            ));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats: must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(
                "test_fraction: must lie strictly between 0 and 1",
            ));
        }
        if self.hidden.is_empty() {
            return Err(Error::config("hidden: need at least one hidden layer"));
        }
        // Partition feasibility, statically checkable for blobs.
        if let Some(c) = self.static_num_classes() {
            self.partition.realize(self.master_seed).validate(c)?;
        }
        self.dropout.validate(self.partition.num_clients)?;
        self.training.validate(self.partition.num_clients)?;
        self.generator.validate()?;
        self.personalization.validate()?;
        self.noise.validate()?;
        if let EmbeddingSpec::Projected { dim } = self.embeddings {
            if dim == 0 {
                return Err(Error::config("embeddings.dim: must be positive"));
            }
        }
        Ok(())
    }

    /// Canonical JSON form used for run-id hashing.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// The seed of repeat `i` (0-based): `master_seed + i`.
    pub fn repeat_seed(&self, i: usize) -> u64 {
        self.master_seed.wrapping_add(i as u64)
    }
}

/// Parse and validate a config file. Unknown keys are hard errors and every
/// validation failure names the offending key and constraint.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}
