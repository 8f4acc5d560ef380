use std::path::{Path, PathBuf};

use odf_core::eval::{LatencyConfig, DEFAULT_EVICTION_BYTES};
use odf_core::geometry::{SceneDescriptor, DEFAULT_CLAMP_DISTANCE};
use odf_core::nn::AdamConfig;
use odf_core::odf::{ModelConfig, TrainConfig};
use odf_core::partition::{PartitionKind, Resolution};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run depends on. Loaded from TOML, overridden by flags, and
/// written back out next to the run's outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Filled in when the resolved config is written.
    pub command: Option<String>,
    pub workers: Option<usize>,
    pub scene: SceneConfig,
    pub collect: CollectConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub obj: Option<PathBuf>,
    pub procedural: Option<SceneDescriptor>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            obj: None,
            procedural: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Number of sampled source positions (procedural scenes only).
    pub sources: usize,
    /// Whitespace-separated `x y z` per line; overrides sampling.
    pub sources_file: Option<PathBuf>,
    pub lattice_n: u32,
    pub clamp: f64,
    pub eye_height: f64,
    pub clearance: f64,
    pub source_seed: u64,
    pub tests_per_source: usize,
    pub test_seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            sources: 200,
            sources_file: None,
            lattice_n: 2000,
            clamp: DEFAULT_CLAMP_DISTANCE,
            eye_height: 1.7,
            clearance: 0.3,
            source_seed: 7,
            tests_per_source: 100,
            test_seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    pub resolution: Resolution,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            kind: PartitionKind::Grid2d,
            resolution: Resolution::Cells([8, 8, 1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Safety margin subtracted from predicted distances at query time (m).
    pub bias: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            lr: t.adam.lr,
            weight_decay: t.adam.weight_decay,
            bias: 0.0,
        }
    }
}

impl TrainSettings {
    pub fn to_core(self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub reps: usize,
    pub inner: usize,
    pub warmup: usize,
    pub eviction_bytes: usize,
    pub batch_sizes: Vec<usize>,
    /// Minimum wall time per throughput point (ms).
    pub min_time_ms: u64,
    /// Depth-map resolutions `[width, height]` for the memory comparison.
    pub depth_resolutions: Vec<[u32; 2]>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 200,
            inner: 32,
            warmup: 1000,
            eviction_bytes: DEFAULT_EVICTION_BYTES,
            batch_sizes: (0..=12).map(|k| 1 << k).collect(),
            min_time_ms: 250,
            depth_resolutions: vec![[256, 128], [512, 256]],
        }
    }
}

impl BenchConfig {
    pub fn latency(&self) -> LatencyConfig {
        LatencyConfig {
            reps: self.reps,
            inner: self.inner,
            warmup: self.warmup,
            eviction_bytes: self.eviction_bytes,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Writes the resolved config as `<output>.toml`.
    pub fn emit(&self, command: &str, output: &Path) -> Result<PathBuf, CliError> {
        let mut resolved = self.clone();
        resolved.command = Some(command.to_string());
        let text = toml::to_string_pretty(&resolved)
            .map_err(|e| CliError::Runtime(format!("serialising config: {e}")))?;
        let mut name = output.as_os_str().to_owned();
        name.push(".toml");
        let path = PathBuf::from(name);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.scene.procedural = Some(SceneDescriptor::box_town(20));
        let text = toml::to_string_pretty(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = toml::from_str(
            "[collect]\nlattice_n = 50\n[model.direction]\nkind = \"sh\"\ndegree = 4\n",
        )
        .unwrap();
        assert_eq!(c.collect.lattice_n, 50);
        assert_eq!(c.collect.sources, 200);
        assert_eq!(c.model.mlp, ModelConfig::default().mlp);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[collect]\nlatice_n = 50\n").is_err());
    }
}
