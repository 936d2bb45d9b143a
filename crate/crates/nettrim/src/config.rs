//! Config-file schema for the CLI: TOML or JSON, unknown keys rejected.
//!
//! Every section is optional and merges over the shipped LeNet preset, so
//! an empty file is a valid full configuration and flags only need to
//! override scalars.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::network::lenet_specs;
use crate::pipeline::{InitMode, LoopConfig};
use crate::train::{LrDecay, TrainConfig};
use crate::trim::TrimPolicy;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub network: NetworkSection,
    pub baseline: TrainSection,
    pub retrain: TrainSection,
    pub policy: PolicySection,
    #[serde(rename = "loop")]
    pub loop_section: LoopSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Named preset; currently "lenet".
    pub preset: Option<String>,
    pub input_shape: Option<(usize, usize, usize)>,
    /// Explicit layer stack; overrides the preset when present.
    pub layers: Option<Vec<LayerSpec>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub lr_decay: Option<LrDecay>,
    pub weight_decay: Option<f32>,
}

impl TrainSection {
    pub fn merged_over(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            seed: self.seed.unwrap_or(base.seed),
            lr_decay: self.lr_decay.or(base.lr_decay),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub target_layers: Option<Vec<String>>,
    pub sigma_multiplier: Option<f64>,
    pub min_remaining: Option<usize>,
    pub max_prune_fraction: Option<f64>,
}

impl PolicySection {
    pub fn merged_over(&self, base: TrimPolicy) -> TrimPolicy {
        TrimPolicy {
            target_layers: self.target_layers.clone().unwrap_or(base.target_layers),
            sigma_multiplier: self.sigma_multiplier.unwrap_or(base.sigma_multiplier),
            min_remaining: self.min_remaining.unwrap_or(base.min_remaining),
            max_prune_fraction: self.max_prune_fraction.unwrap_or(base.max_prune_fraction),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopSection {
    pub iterations: Option<usize>,
    pub init_mode: Option<InitMode>,
    pub accuracy_floor: Option<f64>,
    pub stat_batch_size: Option<usize>,
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mnist_dir: Option<PathBuf>,
    pub stat_set_size: Option<usize>,
    pub split_seed: Option<u64>,
}

impl CliConfig {
    /// Parse a TOML (default) or JSON (by extension or leading brace)
    /// config file; unknown keys are configuration errors.
    pub fn load(path: &Path) -> Result<CliConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json")
            || text.trim_start().starts_with('{');
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Resolve the network stack: explicit layers win, then the preset,
    /// then the LeNet default.
    pub fn network(&self) -> Result<((usize, usize, usize), Vec<LayerSpec>)> {
        let input = self.network.input_shape.unwrap_or((1, 28, 28));
        if let Some(layers) = &self.network.layers {
            return Ok((input, layers.clone()));
        }
        match self.network.preset.as_deref() {
            None | Some("lenet") => Ok((input, lenet_specs())),
            Some(other) => Err(Error::Config(format!("unknown network preset '{other}'"))),
        }
    }

    /// Assemble the full loop configuration over the LeNet preset.
    pub fn loop_config(&self, out_dir: PathBuf) -> Result<LoopConfig> {
        let preset = LoopConfig::lenet_preset(out_dir);
        let (input_shape, specs) = self.network()?;
        Ok(LoopConfig {
            input_shape,
            specs,
            init_seed: self.loop_section.init_seed.unwrap_or(preset.init_seed),
            baseline: self.baseline.merged_over(preset.baseline),
            retrain: self.retrain.merged_over(preset.retrain),
            policy: self.policy.merged_over(preset.policy),
            iterations: self.loop_section.iterations.unwrap_or(preset.iterations),
            init_mode: self.loop_section.init_mode.unwrap_or(preset.init_mode),
            accuracy_floor: self
                .loop_section
                .accuracy_floor
                .unwrap_or(preset.accuracy_floor),
            stat_batch_size: self
                .loop_section
                .stat_batch_size
                .unwrap_or(preset.stat_batch_size),
            threads: preset.threads,
            ..preset
        })
    }
}
