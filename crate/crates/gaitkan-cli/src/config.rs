//! Resolved experiment configuration: defaults, TOML loading and the
//! published desk-scale model configs used by the compare modes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use gaitkan::basis::Activation;
use gaitkan::models::{
    ConvActivation, ConvBlock, ConvNetConfig, Family, KanConfig, MlpConfig, ModelConfig,
    ModelSpec, PaddingMode,
};

use crate::commands::CliError;

/// Flat experiment configuration. Every key has a default, can be set in a
/// TOML file, and can be overridden from the command line. The resolved
/// struct (including the seed) is recorded in every run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Window size for all trained models (10, 20 or 30 samples).
    pub window: usize,
    /// Full-batch training epochs.
    pub epochs: usize,
    /// Bayesian-optimization budget.
    pub budget: usize,
    /// Hyperopt: fraction of training windows held out for validation.
    pub validation_fraction: f64,
    /// Generator: number of synthetic subjects (up to 5 default profiles).
    pub subjects: usize,
    /// Generator: turning trials per (turn type, stiffness) cell.
    pub trials_per_cell: u32,
    /// Generator: straight-walking trials per subject.
    pub straight_trials: u32,
    /// Generator: class-separation knob.
    pub separation: f64,
    /// Generator: additive noise standard deviation.
    pub noise_sigma: f64,
    /// Families exercised by the compare modes.
    pub families: Vec<String>,
    /// Benchmark repetitions.
    pub repetitions: usize,
    pub models: DeskModels,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 10,
            epochs: 50,
            budget: 30,
            validation_fraction: 0.1,
            subjects: 5,
            trials_per_cell: 2,
            straight_trials: 6,
            separation: 1.0,
            noise_sigma: 0.25,
            families: vec!["mlp".into(), "kan".into(), "cnn".into(), "fkan".into()],
            repetitions: 100,
            models: DeskModels::default(),
        }
    }
}

/// The published desk-scale model configs (small enough to train in seconds
/// on a CPU, strong enough to clear the learnability gate on the synthetic
/// data).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskModels {
    pub mlp_hidden: Vec<usize>,
    pub mlp_activation: String,
    pub mlp_weight_decay: f64,
    pub kan_hidden: Vec<usize>,
    pub kan_grid_size: usize,
    pub kan_spline_order: usize,
    pub kan_l1_penalty: f64,
    pub conv_filters: Vec<usize>,
    pub conv_kernel: usize,
    pub conv_padding: String,
    pub conv_pool: usize,
    pub conv_dropout: f64,
    pub conv_classifier: Vec<usize>,
    pub conv_classifier_activation: String,
    pub conv_learning_rate: f64,
    pub conv_global_avg_pool: bool,
    pub fkan_degree: usize,
}

impl Default for DeskModels {
    fn default() -> Self {
        Self {
            mlp_hidden: vec![48, 24],
            mlp_activation: "tanh".into(),
            mlp_weight_decay: 1e-4,
            kan_hidden: vec![16],
            kan_grid_size: 5,
            kan_spline_order: 3,
            kan_l1_penalty: 1e-4,
            conv_filters: vec![16, 24],
            conv_kernel: 7,
            conv_padding: "same".into(),
            conv_pool: 2,
            conv_dropout: 0.3,
            conv_classifier: vec![32],
            conv_classifier_activation: "relu".into(),
            conv_learning_rate: 2e-3,
            conv_global_avg_pool: false,
            fkan_degree: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config `{}`: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config `{}`: {e}", path.display())))
    }

    pub fn parse_families(&self) -> Result<Vec<Family>, CliError> {
        self.families
            .iter()
            .map(|f| {
                Family::parse(f)
                    .ok_or_else(|| CliError::Config(format!("invalid config field `families`: unknown family `{f}`")))
            })
            .collect()
    }

    /// Desk-scale model config for one family at this experiment's window.
    pub fn model_config(&self, family: Family) -> Result<ModelConfig, CliError> {
        let m = &self.models;
        let act = |name: &str, field: &str| {
            Activation::parse(name).map_err(|e| {
                CliError::Config(format!("invalid config field `{field}`: {e}"))
            })
        };
        let spec = match family {
            Family::Mlp => ModelSpec::Mlp(MlpConfig {
                hidden: m.mlp_hidden.clone(),
                activation: act(&m.mlp_activation, "mlp_activation")?,
                weight_decay: m.mlp_weight_decay,
            }),
            Family::Kan => ModelSpec::Kan(KanConfig {
                hidden: m.kan_hidden.clone(),
                grid_size: m.kan_grid_size,
                spline_order: m.kan_spline_order,
                l1_penalty: m.kan_l1_penalty,
            }),
            Family::Cnn | Family::Fkan => {
                let padding = match m.conv_padding.as_str() {
                    "valid" => PaddingMode::Valid,
                    "same" => PaddingMode::Same,
                    other => {
                        return Err(CliError::Config(format!(
                            "invalid config field `conv_padding`: `{other}`"
                        )))
                    }
                };
                let blocks = m
                    .conv_filters
                    .iter()
                    .map(|&filters| ConvBlock {
                        filters,
                        kernel: m.conv_kernel,
                        padding,
                        pool: m.conv_pool,
                    })
                    .collect();
                ModelSpec::Cnn(ConvNetConfig {
                    blocks,
                    conv_activation: if family == Family::Fkan {
                        ConvActivation::Fkan(m.fkan_degree)
                    } else {
                        ConvActivation::Relu
                    },
                    global_avg_pool: m.conv_global_avg_pool,
                    dropout: m.conv_dropout,
                    classifier: m.conv_classifier.clone(),
                    classifier_activation: act(
                        &m.conv_classifier_activation,
                        "conv_classifier_activation",
                    )?,
                    learning_rate: m.conv_learning_rate,
                })
            }
        };
        let config = ModelConfig {
            window_size: self.window,
            spec,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}
