//! Bayesian optimization over the model search spaces: mixed
//! integer/continuous/categorical dimensions, a Gaussian-process surrogate
//! with expected improvement, and a seeded random-search baseline.

mod gp;
mod run;

pub use gp::{expected_improvement, Gp};
pub use run::{optimize, random_search, suggest, OptimizeResult, TrialRecord};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Activation;
use crate::models::{
    ConvActivation, ConvBlock, ConvNetConfig, Family, KanConfig, MlpConfig, ModelConfig,
    ModelSpec, PaddingMode,
};

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("config family {got} does not match the {expected} search space")]
    WrongFamily { expected: &'static str, got: &'static str },
    #[error("point has {got} coordinates, space has {want}")]
    BadPoint { want: usize, got: usize },
    #[error("budget must be >= 1")]
    EmptyBudget,
}

/// An encoded search-space point: one coordinate per integer/continuous
/// dimension, one block of 0/1 coordinates per categorical dimension.
pub type Point = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DimKind {
    Int { lo: i64, hi: i64 },
    /// Continuous range; `log10 = true` encodes the base-10 logarithm.
    Float { lo: f64, hi: f64, log10: bool },
    Cat { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
}

impl Dimension {
    fn width(&self) -> usize {
        match &self.kind {
            DimKind::Cat { options } => options.len(),
            _ => 1,
        }
    }
}

/// Which decoding the space uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// MLP at a fixed window size.
    Mlp(usize),
    /// KAN at a fixed window size.
    Kan(usize),
    /// Conv topology restricted to static activations (CNN).
    Cnn,
    /// Conv topology restricted to fractional-Jacobi activations (FKAN).
    Fkan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub preset: Preset,
    pub dims: Vec<Dimension>,
}

fn int(name: &str, lo: i64, hi: i64) -> Dimension {
    Dimension {
        name: name.into(),
        kind: DimKind::Int { lo, hi },
    }
}

fn log_float(name: &str, lo: f64, hi: f64) -> Dimension {
    Dimension {
        name: name.into(),
        kind: DimKind::Float { lo, hi, log10: true },
    }
}

fn lin_float(name: &str, lo: f64, hi: f64) -> Dimension {
    Dimension {
        name: name.into(),
        kind: DimKind::Float {
            lo,
            hi,
            log10: false,
        },
    }
}

fn cat(name: &str, options: &[&str]) -> Dimension {
    Dimension {
        name: name.into(),
        kind: DimKind::Cat {
            options: options.iter().map(|s| s.to_string()).collect(),
        },
    }
}

const MAX_DENSE_LAYERS: usize = 5;
const MAX_CONV_BLOCKS: usize = 6;
const MAX_HEAD_LAYERS: usize = 3;

fn dense_dims(prefix: &str) -> Vec<Dimension> {
    let mut dims = vec![int("layers", 1, MAX_DENSE_LAYERS as i64)];
    for i in 0..MAX_DENSE_LAYERS {
        dims.push(int(&format!("{prefix}{i}"), 5, 100));
    }
    dims
}

/// MLP space of the published NAS table: up to 5 layers of 5-100 neurons,
/// log-scaled regularization, activation in {tanh, relu, silu}. The window
/// size is fixed externally (the table does not search it).
pub fn mlp_space(window: usize) -> SearchSpace {
    let mut dims = dense_dims("width");
    dims.push(log_float("weight_decay", 1e-5, 1e-1));
    dims.push(cat("activation", &["tanh", "relu", "silu"]));
    SearchSpace {
        preset: Preset::Mlp(window),
        dims,
    }
}

/// KAN space: the MLP ranges plus spline order k in [1,5] and grid size in
/// [1,15].
pub fn kan_space(window: usize) -> SearchSpace {
    let mut dims = dense_dims("width");
    dims.push(log_float("l1_penalty", 1e-5, 1e-1));
    dims.push(int("spline_order", 1, 5));
    dims.push(int("grid_size", 1, 15));
    SearchSpace {
        preset: Preset::Kan(window),
        dims,
    }
}

/// Conv space of the published NAS table, including the window size row;
/// `family` restricts the conv activation set (CNN: static, FKAN:
/// fractional-Jacobi degrees 1-6).
pub fn conv_space(family: Family) -> SearchSpace {
    let (preset, activations): (Preset, Vec<&str>) = match family {
        Family::Cnn => (Preset::Cnn, vec!["relu", "tanh"]),
        Family::Fkan => (
            Preset::Fkan,
            vec!["fkan1", "fkan2", "fkan3", "fkan4", "fkan5", "fkan6"],
        ),
        _ => panic!("conv_space is for CNN/FKAN"),
    };
    let mut dims = vec![cat("window", &["10", "20", "30"])];
    dims.push(int("conv_layers", 1, MAX_CONV_BLOCKS as i64));
    for i in 0..MAX_CONV_BLOCKS {
        dims.push(int(&format!("filters{i}"), 5, 200));
        dims.push(int(&format!("kernel{i}"), 7, 15));
        dims.push(cat(&format!("padding{i}"), &["valid", "same"]));
        dims.push(int(&format!("pool{i}"), 1, 3));
    }
    dims.push(cat("conv_activation", &activations));
    dims.push(lin_float("dropout", 0.2, 0.8));
    dims.push(cat("global_avg_pool", &["no", "yes"]));
    dims.push(int("head_layers", 0, MAX_HEAD_LAYERS as i64));
    for i in 0..MAX_HEAD_LAYERS {
        dims.push(int(&format!("head{i}"), 10, 500));
    }
    dims.push(cat("head_activation", &["relu", "tanh"]));
    dims.push(log_float("learning_rate", 1e-4, 1e-2));
    SearchSpace { preset, dims }
}

/// The space preset for a family at a given (externally fixed) window size
/// for the flat families.
pub fn space_for(family: Family, window: usize) -> SearchSpace {
    match family {
        Family::Mlp => mlp_space(window),
        Family::Kan => kan_space(window),
        Family::Cnn | Family::Fkan => conv_space(family),
    }
}

impl SearchSpace {
    /// Total coordinate count of an encoded point.
    pub fn width(&self) -> usize {
        self.dims.iter().map(Dimension::width).sum()
    }

    /// Uniform sample of an encoded point (categoricals one-hot).
    pub fn sample_point(&self, rng: &mut ChaCha8Rng) -> Point {
        let mut point = Vec::with_capacity(self.width());
        for d in &self.dims {
            match &d.kind {
                DimKind::Int { lo, hi } => {
                    point.push(rng.random_range(*lo..=*hi) as f64);
                }
                DimKind::Float { lo, hi, log10 } => {
                    if *log10 {
                        point.push(rng.random_range(lo.log10()..=hi.log10()));
                    } else {
                        point.push(rng.random_range(*lo..=*hi));
                    }
                }
                DimKind::Cat { options } => {
                    let pick = rng.random_range(0..options.len());
                    for i in 0..options.len() {
                        point.push(f64::from(u8::from(i == pick)));
                    }
                }
            }
        }
        point
    }

    /// Samples a config, retrying a bounded number of times until the decode
    /// validates (conv stacks can collapse for small windows).
    pub fn sample_config(&self, rng: &mut ChaCha8Rng) -> ModelConfig {
        let mut last = self.decode(&self.sample_point(rng));
        for _ in 0..200 {
            if last.validate().is_ok() {
                return last;
            }
            last = self.decode(&self.sample_point(rng));
        }
        last
    }

    fn clip_int(lo: i64, hi: i64, v: f64) -> i64 {
        (v.round() as i64).clamp(lo, hi)
    }

    /// Decodes a point into a config; coordinates outside their bounds are
    /// clipped. Conditional dimensions (widths beyond the decoded depth) are
    /// ignored.
    pub fn decode(&self, point: &Point) -> ModelConfig {
        let mut iter = PointReader { point, pos: 0 };
        match self.preset {
            Preset::Mlp(window) => {
                let (hidden, rest) = self.decode_dense(&mut iter);
                let weight_decay = rest;
                let activation = iter.read_cat(&self.dims[MAX_DENSE_LAYERS + 2]);
                ModelConfig {
                    window_size: window,
                    spec: ModelSpec::Mlp(MlpConfig {
                        hidden,
                        activation: Activation::parse(&activation).expect("space options"),
                        weight_decay,
                    }),
                }
            }
            Preset::Kan(window) => {
                let (hidden, l1_penalty) = self.decode_dense(&mut iter);
                let spline_order =
                    Self::clip_int(1, 5, iter.read_scalar()) as usize;
                let grid_size = Self::clip_int(1, 15, iter.read_scalar()) as usize;
                ModelConfig {
                    window_size: window,
                    spec: ModelSpec::Kan(KanConfig {
                        hidden,
                        grid_size,
                        spline_order,
                        l1_penalty,
                    }),
                }
            }
            Preset::Cnn | Preset::Fkan => {
                let window: usize = iter.read_cat(&self.dims[0]).parse().expect("window");
                let n_conv = Self::clip_int(1, MAX_CONV_BLOCKS as i64, iter.read_scalar());
                let mut blocks = Vec::new();
                for i in 0..MAX_CONV_BLOCKS {
                    let filters = Self::clip_int(5, 200, iter.read_scalar()) as usize;
                    let kernel = Self::clip_int(7, 15, iter.read_scalar()) as usize;
                    let padding = match iter
                        .read_cat(&self.dims[2 + 4 * i + 2])
                        .as_str()
                    {
                        "valid" => PaddingMode::Valid,
                        _ => PaddingMode::Same,
                    };
                    let pool = Self::clip_int(1, 3, iter.read_scalar()) as usize;
                    if (i as i64) < n_conv {
                        blocks.push(ConvBlock {
                            filters,
                            kernel,
                            padding,
                            pool,
                        });
                    }
                }
                let act_dim = &self.dims[2 + 4 * MAX_CONV_BLOCKS];
                let act_token = iter.read_cat(act_dim);
                let conv_activation = match act_token.as_str() {
                    "relu" => ConvActivation::Relu,
                    "tanh" => ConvActivation::Tanh,
                    other => ConvActivation::Fkan(
                        other.trim_start_matches("fkan").parse().expect("degree"),
                    ),
                };
                let dropout = iter.read_scalar().clamp(0.2, 0.8);
                let gap = iter.read_cat(&self.dims[2 + 4 * MAX_CONV_BLOCKS + 2]) == "yes";
                let n_dense = Self::clip_int(0, MAX_HEAD_LAYERS as i64, iter.read_scalar());
                let mut classifier = Vec::new();
                for i in 0..MAX_HEAD_LAYERS {
                    let w = Self::clip_int(10, 500, iter.read_scalar()) as usize;
                    if (i as i64) < n_dense {
                        classifier.push(w);
                    }
                }
                let head_act =
                    iter.read_cat(&self.dims[2 + 4 * MAX_CONV_BLOCKS + 4 + MAX_HEAD_LAYERS]);
                let learning_rate = 10f64
                    .powf(iter.read_scalar())
                    .clamp(1e-4, 1e-2);
                ModelConfig {
                    window_size: window,
                    spec: ModelSpec::Cnn(ConvNetConfig {
                        blocks,
                        conv_activation,
                        global_avg_pool: gap,
                        dropout,
                        classifier,
                        classifier_activation: Activation::parse(&head_act).expect("options"),
                        learning_rate,
                    }),
                }
            }
        }
    }

    /// Shared depth/width/regularization decode for the flat families;
    /// returns (hidden, regularization).
    fn decode_dense(&self, iter: &mut PointReader) -> (Vec<usize>, f64) {
        let layers = Self::clip_int(1, MAX_DENSE_LAYERS as i64, iter.read_scalar());
        let mut hidden = Vec::new();
        for i in 0..MAX_DENSE_LAYERS {
            let w = Self::clip_int(5, 100, iter.read_scalar()) as usize;
            if (i as i64) < layers {
                hidden.push(w);
            }
        }
        let reg = 10f64.powf(iter.read_scalar()).clamp(1e-5, 1e-1);
        (hidden, reg)
    }

    /// Encodes a config of this space's family; integers map to their value,
    /// log dimensions to log10, categoricals to one-hot. Conditional width
    /// dimensions beyond the config's depth encode at their lower bound.
    pub fn encode(&self, config: &ModelConfig) -> Result<Point, HyperoptError> {
        let wrong = |expected: &'static str| HyperoptError::WrongFamily {
            expected,
            got: config.family().name(),
        };
        let mut point = Vec::with_capacity(self.width());
        match (&self.preset, &config.spec) {
            (Preset::Mlp(_), ModelSpec::Mlp(m)) => {
                encode_dense(&mut point, &m.hidden, m.weight_decay);
                encode_onehot(&mut point, &["tanh", "relu", "silu"], m.activation.name());
            }
            (Preset::Kan(_), ModelSpec::Kan(k)) => {
                encode_dense(&mut point, &k.hidden, k.l1_penalty);
                point.push(k.spline_order as f64);
                point.push(k.grid_size as f64);
            }
            (Preset::Cnn | Preset::Fkan, ModelSpec::Cnn(c)) => {
                let family_ok = matches!(
                    (self.preset, c.conv_activation),
                    (Preset::Cnn, ConvActivation::Relu | ConvActivation::Tanh)
                        | (Preset::Fkan, ConvActivation::Fkan(_))
                );
                if !family_ok {
                    return Err(wrong(match self.preset {
                        Preset::Cnn => "cnn",
                        _ => "fkan",
                    }));
                }
                encode_onehot(
                    &mut point,
                    &["10", "20", "30"],
                    &config.window_size.to_string(),
                );
                point.push(c.blocks.len() as f64);
                for i in 0..MAX_CONV_BLOCKS {
                    let b = c.blocks.get(i);
                    point.push(b.map_or(5.0, |b| b.filters as f64));
                    point.push(b.map_or(7.0, |b| b.kernel as f64));
                    let pad = b.map_or("valid", |b| match b.padding {
                        PaddingMode::Valid => "valid",
                        PaddingMode::Same => "same",
                    });
                    encode_onehot(&mut point, &["valid", "same"], pad);
                    point.push(b.map_or(1.0, |b| b.pool as f64));
                }
                match self.preset {
                    Preset::Cnn => encode_onehot(
                        &mut point,
                        &["relu", "tanh"],
                        &c.conv_activation.name(),
                    ),
                    _ => encode_onehot(
                        &mut point,
                        &["fkan1", "fkan2", "fkan3", "fkan4", "fkan5", "fkan6"],
                        &c.conv_activation.name(),
                    ),
                }
                point.push(c.dropout);
                encode_onehot(
                    &mut point,
                    &["no", "yes"],
                    if c.global_avg_pool { "yes" } else { "no" },
                );
                point.push(c.classifier.len() as f64);
                for i in 0..MAX_HEAD_LAYERS {
                    point.push(c.classifier.get(i).map_or(10.0, |&w| w as f64));
                }
                encode_onehot(
                    &mut point,
                    &["relu", "tanh"],
                    c.classifier_activation.name(),
                );
                point.push(c.learning_rate.log10());
            }
            (Preset::Mlp(_), _) => return Err(wrong("mlp")),
            (Preset::Kan(_), _) => return Err(wrong("kan")),
            (Preset::Cnn | Preset::Fkan, _) => {
                return Err(wrong(match self.preset {
                    Preset::Cnn => "cnn",
                    _ => "fkan",
                }))
            }
        }
        debug_assert_eq!(point.len(), self.width());
        Ok(point)
    }

    /// Maps an encoded point onto the unit cube for the surrogate.
    pub fn to_unit_cube(&self, point: &Point) -> Vec<f64> {
        let mut out = Vec::with_capacity(point.len());
        let mut pos = 0usize;
        for d in &self.dims {
            match &d.kind {
                DimKind::Int { lo, hi } => {
                    let span = (hi - lo) as f64;
                    let v = if span > 0.0 {
                        (point[pos] - *lo as f64) / span
                    } else {
                        0.0
                    };
                    out.push(v.clamp(0.0, 1.0));
                    pos += 1;
                }
                DimKind::Float { lo, hi, log10 } => {
                    let (l, h) = if *log10 {
                        (lo.log10(), hi.log10())
                    } else {
                        (*lo, *hi)
                    };
                    out.push(((point[pos] - l) / (h - l)).clamp(0.0, 1.0));
                    pos += 1;
                }
                DimKind::Cat { options } => {
                    for i in 0..options.len() {
                        out.push(point[pos + i].clamp(0.0, 1.0));
                    }
                    pos += options.len();
                }
            }
        }
        out
    }
}

struct PointReader<'a> {
    point: &'a [f64],
    pos: usize,
}

impl PointReader<'_> {
    fn read_scalar(&mut self) -> f64 {
        let v = self.point[self.pos];
        self.pos += 1;
        v
    }

    /// Argmax over the one-hot block; ties break toward the first option.
    fn read_cat(&mut self, dim: &Dimension) -> String {
        let DimKind::Cat { options } = &dim.kind else {
            panic!("read_cat on non-categorical `{}`", dim.name)
        };
        let block = &self.point[self.pos..self.pos + options.len()];
        self.pos += options.len();
        let mut best = 0usize;
        for i in 1..options.len() {
            if block[i] > block[best] {
                best = i;
            }
        }
        options[best].clone()
    }
}

fn encode_dense(point: &mut Point, hidden: &[usize], reg: f64) {
    point.push(hidden.len() as f64);
    for i in 0..MAX_DENSE_LAYERS {
        point.push(hidden.get(i).map_or(5.0, |&w| w as f64));
    }
    point.push(reg.log10());
}

fn encode_onehot(point: &mut Point, options: &[&str], value: &str) {
    for o in options {
        point.push(f64::from(u8::from(*o == value)));
    }
}
