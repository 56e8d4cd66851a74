//! Run configuration, manifest, and the documented seed fan-out.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::tokenize::fnv1a64;
use crate::train::{LossConfig, OptimizerConfig};

/// Finalizer from the splitmix64 generator; a good 64-bit mixer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a named sub-seed from the global seed:
/// `splitmix64(global ^ fnv1a64(label))`. Each pipeline component draws its
/// randomness from its own label, so components reproduce independently.
pub fn sub_seed(global: u64, label: &str) -> u64 {
    splitmix64(global ^ fnv1a64(label.as_bytes()))
}

/// Folds an index (fold number, epoch, step...) into a seed:
/// `splitmix64(seed ^ splitmix64(n))`.
pub fn mix_seed(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n))
}

/// Sub-seed labels used by the pipeline.
pub const SEED_LABELS: [&str; 5] = ["split", "init", "dropout", "sampling", "shuffle"];

/// The single structured run configuration consumed by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Truncation preset name, e.g. `h200t56`.
    pub policy: String,
    /// Fold count for cross-validation.
    pub k: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            policy: "h200t56".to_string(),
            k: 10,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// The named sub-seeds derived from this run's global seed.
    pub fn sub_seeds(&self) -> BTreeMap<String, u64> {
        SEED_LABELS
            .iter()
            .map(|label| (label.to_string(), sub_seed(self.seed, label)))
            .collect()
    }
}

/// Everything needed to reproduce one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub sub_seeds: BTreeMap<String, u64>,
    pub input_paths: Vec<String>,
    pub output_dir: String,
    pub started_at: String,
    pub finished_at: Option<String>,
}

impl RunManifest {
    pub fn new(config: RunConfig, input_paths: Vec<String>, output_dir: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            sub_seeds: config.sub_seeds(),
            config,
            input_paths,
            output_dir,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(chrono::Utc::now().to_rfc3339());
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(path, json)
    }
}
