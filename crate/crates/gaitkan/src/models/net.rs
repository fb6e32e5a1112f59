//! Parameter layout, initialization and forward-graph construction for the
//! four families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    ConvActivation, ConvNetConfig, ModelConfig, ModelError, ModelSpec, PaddingMode, Standardizer,
    TrainedModel,
};
use crate::basis::BSplineGrid;
use crate::data::NUM_CHANNELS;
use crate::optim::Parameter;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;

/// One named parameter tensor in the model's flat layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Sequence length after a conv layer; `None` if the kernel does not fit.
pub fn conv_output_len(len: usize, kernel: usize, padding: PaddingMode) -> Option<usize> {
    match padding {
        PaddingMode::Valid => (len >= kernel).then(|| len - kernel + 1),
        PaddingMode::Same => Some(len),
    }
}

fn pads(kernel: usize, padding: PaddingMode) -> (usize, usize) {
    match padding {
        PaddingMode::Valid => (0, 0),
        PaddingMode::Same => {
            let total = kernel - 1;
            (total / 2, total - total / 2)
        }
    }
}

/// Sequence length after each conv block, rejecting stacks that collapse the
/// feature map to nothing.
pub(crate) fn conv_stack_lengths(
    cfg: &ConvNetConfig,
    window: usize,
) -> Result<Vec<usize>, ModelError> {
    let mut len = window;
    let mut out = Vec::with_capacity(cfg.blocks.len());
    for (i, b) in cfg.blocks.iter().enumerate() {
        len = conv_output_len(len, b.kernel, b.padding).ok_or_else(|| ModelError::Config {
            field: format!("blocks[{i}].kernel"),
            msg: format!("kernel {} exceeds feature length {len}", b.kernel),
        })?;
        len /= b.pool;
        if len == 0 {
            return Err(ModelError::Config {
                field: format!("blocks[{i}].pool"),
                msg: format!("pool {} empties the feature map", b.pool),
            });
        }
        out.push(len);
    }
    Ok(out)
}

/// Width of the feature vector feeding the classifier.
fn classifier_input(cfg: &ConvNetConfig, window: usize) -> Result<usize, ModelError> {
    let lengths = conv_stack_lengths(cfg, window)?;
    let last_len = *lengths.last().expect(">= 1 block");
    let channels = cfg.blocks.last().expect(">= 1 block").filters;
    Ok(if cfg.global_avg_pool {
        channels
    } else {
        last_len * channels
    })
}

fn dense_dims(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(NUM_CLASSES);
    dims
}

/// The model's parameter layout, in construction order. Drives both
/// initialization and container validation.
pub fn param_shapes(config: &ModelConfig) -> Result<Vec<ParamGroup>, ModelError> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| out.push(ParamGroup { name, shape });
    match &config.spec {
        ModelSpec::Mlp(m) => {
            let dims = dense_dims(config.flat_input(), &m.hidden);
            for (i, w) in dims.windows(2).enumerate() {
                push(format!("dense{i}.weight"), vec![w[0], w[1]]);
                push(format!("dense{i}.bias"), vec![w[1]]);
            }
        }
        ModelSpec::Kan(k) => {
            let nb = k.grid_size + k.spline_order;
            let dims = dense_dims(config.flat_input(), &k.hidden);
            for (i, w) in dims.windows(2).enumerate() {
                push(format!("kan{i}.base_weight"), vec![w[1], w[0]]);
                push(format!("kan{i}.spline_weight"), vec![w[1], w[0]]);
                push(format!("kan{i}.spline_coef"), vec![w[1], w[0], nb]);
            }
        }
        ModelSpec::Cnn(c) => {
            let mut in_ch = NUM_CHANNELS;
            for (i, b) in c.blocks.iter().enumerate() {
                push(format!("conv{i}.kernel"), vec![b.filters, b.kernel, in_ch]);
                push(format!("conv{i}.bias"), vec![b.filters]);
                if let ConvActivation::Fkan(d) = c.conv_activation {
                    push(format!("conv{i}.jacobi_coef"), vec![d + 1]);
                    push(format!("conv{i}.lambda_raw"), vec![1]);
                }
                in_ch = b.filters;
            }
            let dims = dense_dims(classifier_input(c, config.window_size)?, &c.classifier);
            for (i, w) in dims.windows(2).enumerate() {
                push(format!("head{i}.weight"), vec![w[0], w[1]]);
                push(format!("head{i}.bias"), vec![w[1]]);
            }
        }
    }
    Ok(out)
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

/// Builds an untrained model with seeded initialization:
/// dense/conv/KAN-edge weights uniform in ±sqrt(6/(fan_in+fan_out)), biases
/// zero, spline coefficients N(0, 0.1), lambda at 0.5 (raw 0), and Jacobi
/// coefficients N(0, 0.1) shifted so the linear term starts at 1.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a17_4a11);
    let mut params = Vec::new();
    for group in param_shapes(config)? {
        let tensor = match group.name.rsplit('.').next().expect("dotted name") {
            "weight" => {
                let (fi, fo) = (group.shape[0], group.shape[1]);
                glorot(&mut rng, &group.shape, fi, fo)
            }
            "kernel" => {
                let (fo, k, fi) = (group.shape[0], group.shape[1], group.shape[2]);
                glorot(&mut rng, &group.shape, k * fi, k * fo)
            }
            "bias" => Tensor::zeros(&group.shape),
            // Edge weights follow the same fan-scaled rule as dense weights:
            // all-ones edge weights make every node sum ~in_dim * E[silu],
            // which saturates the next layer's tanh squash and leaves deep
            // KANs untrainable.
            "base_weight" | "spline_weight" => {
                let (fo, fi) = (group.shape[0], group.shape[1]);
                glorot(&mut rng, &group.shape, fi, fo)
            }
            "spline_coef" => normal(&mut rng, &group.shape, 0.1),
            "jacobi_coef" => {
                let mut t = normal(&mut rng, &group.shape, 0.1);
                t.data_mut()[1] += 1.0;
                t
            }
            "lambda_raw" => Tensor::zeros(&group.shape),
            other => unreachable!("unknown parameter kind {other}"),
        };
        params.push(Parameter::new(tensor));
    }
    Ok(TrainedModel {
        config: config.clone(),
        params,
        history: Vec::new(),
        standardizer: Standardizer::identity(),
    })
}

/// Per-forward mode: dropout masks are sampled only while training.
pub enum Mode<'r> {
    Eval,
    Train { rng: &'r mut ChaCha8Rng },
}

/// Builds the forward graph from input node `x` to the logits `[n, 3]`.
///
/// `param_ids` must be the tape leaves of `model.params`, in order. For MLP
/// and KAN, `x` is `[n, W*6]`; for conv families, `[n, W, 6]`.
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    param_ids: &[NodeId],
    x: NodeId,
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    match &config.spec {
        ModelSpec::Mlp(m) => {
            let layers = m.hidden.len() + 1;
            let mut h = x;
            for i in 0..layers {
                let w = param_ids[2 * i];
                let b = param_ids[2 * i + 1];
                let z = tape.matmul(h, w)?;
                h = tape.add_bias(z, b)?;
                if i + 1 < layers {
                    h = tape.activation(h, m.activation);
                }
            }
            Ok(h)
        }
        ModelSpec::Kan(k) => {
            let grid = BSplineGrid::symmetric(k.grid_size, k.spline_order)?;
            let layers = k.hidden.len() + 1;
            let mut h = x;
            for i in 0..layers {
                let wb = param_ids[3 * i];
                let ws = param_ids[3 * i + 1];
                let coef = param_ids[3 * i + 2];
                h = tape.kan_layer(h, wb, ws, coef, &grid)?;
            }
            Ok(h)
        }
        ModelSpec::Cnn(c) => {
            let mut h = x;
            let mut idx = 0usize;
            for b in &c.blocks {
                let w = param_ids[idx];
                let bias = param_ids[idx + 1];
                idx += 2;
                let (pl, pr) = pads(b.kernel, b.padding);
                h = tape.conv1d(h, w, bias, pl, pr)?;
                h = match c.conv_activation {
                    ConvActivation::Relu => tape.relu(h),
                    ConvActivation::Tanh => tape.tanh(h),
                    ConvActivation::Fkan(_) => {
                        let coef = param_ids[idx];
                        let lambda = param_ids[idx + 1];
                        idx += 2;
                        tape.fkan_activation(h, coef, lambda)?
                    }
                };
                if b.pool > 1 {
                    h = tape.maxpool1d(h, b.pool)?;
                }
            }
            let mut feat = if c.global_avg_pool {
                tape.global_avg_pool(h)?
            } else {
                tape.flatten_rows(h)?
            };
            if let Mode::Train { rng } = mode {
                let keep = 1.0 - c.dropout;
                let mask: Vec<f64> = (0..tape.value(feat).len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                feat = tape.dropout_mask(feat, mask)?;
            }
            let layers = c.classifier.len() + 1;
            let mut h = feat;
            for i in 0..layers {
                let w = param_ids[idx + 2 * i];
                let b = param_ids[idx + 2 * i + 1];
                let z = tape.matmul(h, w)?;
                h = tape.add_bias(z, b)?;
                if i + 1 < layers {
                    h = tape.activation(h, c.classifier_activation);
                }
            }
            Ok(h)
        }
    }
}

/// Adds the family's regularization term to a loss node: L2 on MLP dense
/// weights, L1 on KAN spline coefficients, nothing for conv families (they
/// regularize through dropout).
pub fn add_regularization(
    tape: &mut Tape,
    config: &ModelConfig,
    param_ids: &[NodeId],
    loss: NodeId,
) -> Result<NodeId, ModelError> {
    match &config.spec {
        ModelSpec::Mlp(m) => {
            let layers = m.hidden.len() + 1;
            let mut total = loss;
            for i in 0..layers {
                let sq = tape.sum_squares(param_ids[2 * i]);
                let scaled = tape.scale(sq, m.weight_decay);
                total = tape.add(total, scaled)?;
            }
            Ok(total)
        }
        ModelSpec::Kan(k) => {
            let layers = k.hidden.len() + 1;
            let mut total = loss;
            for i in 0..layers {
                let l1 = tape.abs_sum(param_ids[3 * i + 2]);
                let scaled = tape.scale(l1, k.l1_penalty);
                total = tape.add(total, scaled)?;
            }
            Ok(total)
        }
        ModelSpec::Cnn(_) => Ok(loss),
    }
}

/// Parameter count of a KAN edge stack over explicit dims (used by tests and
/// sizing reports): edges carry (G + k) coefficients plus w_b and w_s each.
pub fn kan_edge_parameters(dims: &[usize], grid_size: usize, spline_order: usize) -> usize {
    let nb = grid_size + spline_order;
    dims.windows(2)
        .map(|w| w[0] * w[1] * (nb + 2))
        .sum()
}
