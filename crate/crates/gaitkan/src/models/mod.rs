//! The four classifier families (MLP, KAN, 1-D CNN, FKAN), their
//! configuration space, the class-weighted full-batch trainer, evaluation
//! and inference benchmarking.

mod bench;
mod net;
mod train;

pub use bench::benchmark_inference;
pub use net::{build_model, conv_output_len, kan_edge_parameters, param_shapes, ParamGroup};
pub use train::{
    evaluate, evaluate_with_divisions, predict, predict_batch, train, EvalReport, Standardizer,
    TrainOptions,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{Activation, BasisError};
use crate::data::WINDOW_SIZES;
use crate::optim::Parameter;
use crate::tensor::{NumError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    /// A configuration field is outside its allowed range.
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: String, got: String },
    #[error("training aborted at epoch {epoch}: non-finite loss")]
    NonFiniteLoss { epoch: usize },
    #[error("training aborted at epoch {epoch}: {source}")]
    Optimizer {
        epoch: usize,
        source: NumError,
    },
    #[error("training set lacks class {0}")]
    MissingClass(&'static str),
    #[error("benchmark needs >= 30 repetitions, got {0}")]
    BadRepetitions(usize),
    #[error("model container: {0}")]
    Container(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Which of the four families a config realizes. CNN and FKAN share the
/// convolutional topology and differ only in the conv activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mlp,
    Kan,
    Cnn,
    Fkan,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::Kan => "kan",
            Self::Cnn => "cnn",
            Self::Fkan => "fkan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Some(Self::Mlp),
            "kan" => Some(Self::Kan),
            "cnn" => Some(Self::Cnn),
            "fkan" => Some(Self::Fkan),
            _ => None,
        }
    }
}

/// MLP: flattened window through dense layers with one static activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths, 1..=5 layers of 5..=100 neurons.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// L2 penalty on dense weights, in [1e-5, 1e-1].
    pub weight_decay: f64,
}

/// KAN: flattened window through layers whose edges carry
/// `w_b silu(x) + w_s sum_i c_i B_i(tanh x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanConfig {
    /// Hidden layer widths, 1..=5 layers of 5..=100 neurons.
    pub hidden: Vec<usize>,
    /// Knot intervals G in [1, 15].
    pub grid_size: usize,
    /// Spline degree k in [1, 5].
    pub spline_order: usize,
    /// L1 penalty on spline coefficients, in [1e-5, 1e-1].
    pub l1_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    Valid,
    Same,
}

/// One conv block: conv1d -> activation -> max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    /// 5..=200 filters.
    pub filters: usize,
    /// Kernel size 7..=15.
    pub kernel: usize,
    pub padding: PaddingMode,
    /// Pool size 1..=3 (stride = pool size).
    pub pool: usize,
}

/// Activation of the convolutional part. `Fkan(d)` is the fractional-Jacobi
/// block of degree `d` in 1..=6 with learnable coefficients and exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvActivation {
    Relu,
    Tanh,
    Fkan(usize),
}

impl ConvActivation {
    pub fn name(self) -> String {
        match self {
            Self::Relu => "relu".into(),
            Self::Tanh => "tanh".into(),
            Self::Fkan(d) => format!("fkan{d}"),
        }
    }
}

/// Shared topology of CNN and FKAN: conv blocks, then flatten or global
/// average pooling, dropout, and a dense classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetConfig {
    /// 1..=6 blocks.
    pub blocks: Vec<ConvBlock>,
    pub conv_activation: ConvActivation,
    /// Replace flatten by global average pooling before the classifier.
    pub global_avg_pool: bool,
    /// Dropout rate in [0.2, 0.8], applied to the feature vector while
    /// training.
    pub dropout: f64,
    /// 0..=3 dense hidden layers of 10..=500 neurons.
    pub classifier: Vec<usize>,
    pub classifier_activation: Activation,
    /// Adam learning rate in [1e-4, 1e-2].
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family")]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Kan(KanConfig),
    Cnn(ConvNetConfig),
}

/// Full architecture + hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window size W in {10, 20, 30}; inputs are W x 6.
    pub window_size: usize,
    pub spec: ModelSpec,
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match &self.spec {
            ModelSpec::Mlp(_) => Family::Mlp,
            ModelSpec::Kan(_) => Family::Kan,
            ModelSpec::Cnn(c) => match c.conv_activation {
                ConvActivation::Fkan(_) => Family::Fkan,
                _ => Family::Cnn,
            },
        }
    }

    /// Flat input width for the non-convolutional families.
    pub fn flat_input(&self) -> usize {
        self.window_size * crate::data::NUM_CHANNELS
    }

    /// Range-checks every field against the search-space bounds and, for
    /// conv topologies, that the feature map survives the stack.
    pub fn validate(&self) -> Result<(), ModelError> {
        let cfg = |field: &str, msg: String| ModelError::Config {
            field: field.into(),
            msg,
        };
        if !WINDOW_SIZES.contains(&self.window_size) {
            return Err(cfg(
                "window_size",
                format!("{} not in {WINDOW_SIZES:?}", self.window_size),
            ));
        }
        let check_hidden = |hidden: &[usize]| -> Result<(), ModelError> {
            if hidden.is_empty() || hidden.len() > 5 {
                return Err(cfg(
                    "hidden",
                    format!("{} layers, allowed 1..=5", hidden.len()),
                ));
            }
            for &h in hidden {
                if !(5..=100).contains(&h) {
                    return Err(cfg("hidden", format!("width {h} outside 5..=100")));
                }
            }
            Ok(())
        };
        let check_reg = |field: &str, v: f64| -> Result<(), ModelError> {
            if !(1e-5..=1e-1).contains(&v) {
                return Err(cfg(field, format!("{v} outside [1e-5, 1e-1]")));
            }
            Ok(())
        };
        match &self.spec {
            ModelSpec::Mlp(m) => {
                check_hidden(&m.hidden)?;
                check_reg("weight_decay", m.weight_decay)?;
            }
            ModelSpec::Kan(k) => {
                check_hidden(&k.hidden)?;
                check_reg("l1_penalty", k.l1_penalty)?;
                if !(1..=15).contains(&k.grid_size) {
                    return Err(cfg("grid_size", format!("{} outside 1..=15", k.grid_size)));
                }
                if !(1..=5).contains(&k.spline_order) {
                    return Err(cfg(
                        "spline_order",
                        format!("{} outside 1..=5", k.spline_order),
                    ));
                }
            }
            ModelSpec::Cnn(c) => {
                if c.blocks.is_empty() || c.blocks.len() > 6 {
                    return Err(cfg(
                        "blocks",
                        format!("{} conv layers, allowed 1..=6", c.blocks.len()),
                    ));
                }
                for (i, b) in c.blocks.iter().enumerate() {
                    if !(5..=200).contains(&b.filters) {
                        return Err(cfg(
                            &format!("blocks[{i}].filters"),
                            format!("{} outside 5..=200", b.filters),
                        ));
                    }
                    if !(7..=15).contains(&b.kernel) {
                        return Err(cfg(
                            &format!("blocks[{i}].kernel"),
                            format!("{} outside 7..=15", b.kernel),
                        ));
                    }
                    if !(1..=3).contains(&b.pool) {
                        return Err(cfg(
                            &format!("blocks[{i}].pool"),
                            format!("{} outside 1..=3", b.pool),
                        ));
                    }
                }
                if let ConvActivation::Fkan(d) = c.conv_activation {
                    if !(1..=6).contains(&d) {
                        return Err(cfg(
                            "conv_activation",
                            format!("fkan degree {d} outside 1..=6"),
                        ));
                    }
                }
                if !(0.2..=0.8).contains(&c.dropout) {
                    return Err(cfg("dropout", format!("{} outside [0.2, 0.8]", c.dropout)));
                }
                if c.classifier.len() > 3 {
                    return Err(cfg(
                        "classifier",
                        format!("{} dense layers, allowed 0..=3", c.classifier.len()),
                    ));
                }
                for &h in &c.classifier {
                    if !(10..=500).contains(&h) {
                        return Err(cfg("classifier", format!("width {h} outside 10..=500")));
                    }
                }
                if !matches!(
                    c.classifier_activation,
                    Activation::Relu | Activation::Tanh
                ) {
                    return Err(cfg(
                        "classifier_activation",
                        "must be relu or tanh".into(),
                    ));
                }
                if !(1e-4..=1e-2).contains(&c.learning_rate) {
                    return Err(cfg(
                        "learning_rate",
                        format!("{} outside [1e-4, 1e-2]", c.learning_rate),
                    ));
                }
                // the feature map must survive the conv stack
                net::conv_stack_lengths(c, self.window_size)?;
            }
        }
        Ok(())
    }
}

/// A built (possibly trained) model: config, flat parameter set, training
/// history and the train-set standardizer.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
    pub history: Vec<f64>,
    pub standardizer: Standardizer,
}

impl TrainedModel {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

const FORMAT_VERSION: u32 = 1;

/// Self-describing serialization container. JSON floats round-trip exactly,
/// so deserializing reproduces predictions bit for bit.
#[derive(Serialize, Deserialize)]
struct ModelContainer {
    format_version: u32,
    config: ModelConfig,
    standardizer: Standardizer,
    history: Vec<f64>,
    params: Vec<Tensor>,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let container = ModelContainer {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
            history: self.history.clone(),
            params: self.params.iter().map(|p| p.value.clone()).collect(),
        };
        serde_json::to_string(&container).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let container: ModelContainer =
            serde_json::from_str(s).map_err(|e| ModelError::Container(e.to_string()))?;
        if container.format_version != FORMAT_VERSION {
            return Err(ModelError::Container(format!(
                "unsupported format version {}",
                container.format_version
            )));
        }
        container.config.validate()?;
        let shapes = param_shapes(&container.config)?;
        if shapes.len() != container.params.len() {
            return Err(ModelError::Container(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                container.params.len()
            )));
        }
        for (g, t) in shapes.iter().zip(&container.params) {
            if g.shape != t.shape() {
                return Err(ModelError::Container(format!(
                    "parameter `{}`: expected shape {:?}, got {:?}",
                    g.name,
                    g.shape,
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config: container.config,
            params: container.params.into_iter().map(Parameter::new).collect(),
            history: container.history,
            standardizer: container.standardizer,
        })
    }
}
