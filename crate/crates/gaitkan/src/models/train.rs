//! Class-weighted full-batch training, prediction and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{add_regularization, forward, Mode};
use super::{ModelConfig, ModelError, ModelSpec, TrainedModel};
use crate::data::{GaitLabel, Window, NUM_CHANNELS};
use crate::metrics::{
    macro_f1, per_class_scores, ClassScores, ClassWeights, ConfusionMatrix, NUM_CLASSES,
};
use crate::optim::Adam;
use crate::tape::Tape;
use crate::tensor::{softmax_rows, Tensor};

/// Per-channel affine normalization fitted on training windows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    pub fn fit(windows: &[Window]) -> Self {
        let mut mean = [0.0f64; NUM_CHANNELS];
        let mut count = 0u64;
        for w in windows {
            for t in 0..w.width {
                for c in 0..NUM_CHANNELS {
                    mean[c] += w.channel(t, c);
                }
            }
            count += w.width as u64;
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = [0.0f64; NUM_CHANNELS];
        for w in windows {
            for t in 0..w.width {
                for c in 0..NUM_CHANNELS {
                    let d = w.channel(t, c) - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let mut std = [0.0f64; NUM_CHANNELS];
        for c in 0..NUM_CHANNELS {
            std[c] = (var[c] / count as f64).sqrt().max(1e-8);
        }
        Self { mean, std }
    }

    /// Normalizes flat `[W, 6]` row-major data.
    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        data.iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i % NUM_CHANNELS;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Full-batch epochs; the protocol trains for 50.
    pub epochs: usize,
    pub seed: u64,
    /// Overrides the family's learning rate (1e-3 for MLP/KAN, the config
    /// value for conv families).
    pub lr_override: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            lr_override: None,
        }
    }
}

fn check_windows(config: &ModelConfig, windows: &[Window]) -> Result<(), ModelError> {
    for w in windows {
        if w.width != config.window_size || w.data.len() != config.flat_input() {
            return Err(ModelError::InputShape {
                expected: format!("{} x {NUM_CHANNELS} window", config.window_size),
                got: format!("{} x {} window", w.width, w.data.len() / w.width.max(1)),
            });
        }
    }
    Ok(())
}

/// Assembles the standardized input tensor in the family's layout.
fn input_tensor(
    config: &ModelConfig,
    standardizer: &Standardizer,
    windows: &[Window],
) -> Tensor {
    let n = windows.len();
    let mut data = Vec::with_capacity(n * config.flat_input());
    for w in windows {
        data.extend(standardizer.apply(&w.data));
    }
    let shape = match &config.spec {
        ModelSpec::Cnn(_) => vec![n, config.window_size, NUM_CHANNELS],
        _ => vec![n, config.flat_input()],
    };
    Tensor::from_vec(shape, data).expect("windows validated")
}

/// Trains in place: fits the standardizer on `windows`, then runs
/// full-batch Adam for `opts.epochs` epochs on the weighted cross-entropy
/// plus the family's regularizer. Deterministic in (model seed, opts.seed).
pub fn train(
    model: &mut TrainedModel,
    windows: &[Window],
    weights: &ClassWeights,
    opts: &TrainOptions,
) -> Result<(), ModelError> {
    check_windows(&model.config, windows)?;
    let mut present = [false; NUM_CLASSES];
    for w in windows {
        present[w.label.index()] = true;
    }
    for label in GaitLabel::ALL {
        if !present[label.index()] {
            return Err(ModelError::MissingClass(label.token()));
        }
    }
    model.standardizer = Standardizer::fit(windows);
    let x = input_tensor(&model.config, &model.standardizer, windows);
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let lr = opts.lr_override.unwrap_or(match &model.config.spec {
        ModelSpec::Cnn(c) => c.learning_rate,
        _ => 1e-3,
    });
    let mut adam = Adam::new(lr);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xd20b_0417);
    model.history.clear();
    for epoch in 0..opts.epochs {
        let mut tape = Tape::new();
        let param_ids: Vec<_> = model
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        let xi = tape.constant(x.clone());
        let mut mode = Mode::Train {
            rng: &mut dropout_rng,
        };
        let logits = forward(&mut tape, &model.config, &param_ids, xi, &mut mode)?;
        let ce = tape.weighted_cross_entropy(logits, &labels, &weights.weights)?;
        let loss = add_regularization(&mut tape, &model.config, &param_ids, ce)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        let grads = tape.backward(loss)?;
        for (p, id) in model.params.iter_mut().zip(&param_ids) {
            p.zero_grad();
            if let Some(g) = grads.wrt(*id) {
                p.grad = g.clone();
            }
        }
        drop(tape);
        adam.step(&mut model.params)
            .map_err(|source| ModelError::Optimizer { epoch, source })?;
        model.history.push(loss_value);
    }
    Ok(())
}

fn logits_for(model: &TrainedModel, windows: &[Window]) -> Result<Tensor, ModelError> {
    check_windows(&model.config, windows)?;
    let x = input_tensor(&model.config, &model.standardizer, windows);
    let mut tape = Tape::new();
    let param_ids: Vec<_> = model
        .params
        .iter()
        .map(|p| tape.leaf(p.value.clone()))
        .collect();
    let xi = tape.constant(x);
    let logits = forward(&mut tape, &model.config, &param_ids, xi, &mut Mode::Eval)?;
    Ok(tape.value(logits).clone())
}

/// Class probabilities for one window (softmax over the logits).
pub fn predict(model: &TrainedModel, window: &Window) -> Result<[f64; 3], ModelError> {
    let logits = logits_for(model, std::slice::from_ref(window))?;
    let probs = softmax_rows(&logits)?;
    Ok([probs.data()[0], probs.data()[1], probs.data()[2]])
}

/// Hard predictions for a batch; argmax ties break toward the lowest class
/// index.
pub fn predict_batch(
    model: &TrainedModel,
    windows: &[Window],
) -> Result<Vec<GaitLabel>, ModelError> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let logits = logits_for(model, windows)?;
    let data = logits.data();
    let mut out = Vec::with_capacity(windows.len());
    for s in 0..windows.len() {
        let row = &data[s * NUM_CLASSES..(s + 1) * NUM_CLASSES];
        let mut best = 0usize;
        for j in 1..NUM_CLASSES {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.push(GaitLabel::from_index(best));
    }
    Ok(out)
}

/// Macro-F1, per-class scores, confusion counts and (optionally) the
/// ten-division score vector for the paired tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub per_class: [ClassScores; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    /// Macro-F1 per stratified test division (empty when evaluated without
    /// divisions).
    pub division_f1: Vec<f64>,
}

pub fn evaluate(model: &TrainedModel, windows: &[Window]) -> Result<EvalReport, ModelError> {
    evaluate_with_divisions(model, windows, &[])
}

/// Evaluates once and scores each division on the shared predictions.
pub fn evaluate_with_divisions(
    model: &TrainedModel,
    windows: &[Window],
    divisions: &[Vec<usize>],
) -> Result<EvalReport, ModelError> {
    let preds = predict_batch(model, windows)?;
    let truth: Vec<GaitLabel> = windows.iter().map(|w| w.label).collect();
    let confusion = ConfusionMatrix::from_labels(&truth, &preds)
        .map_err(|e| ModelError::Container(e.to_string()))?;
    let division_f1 = divisions
        .iter()
        .map(|fold| {
            let t: Vec<GaitLabel> = fold.iter().map(|&i| truth[i]).collect();
            let p: Vec<GaitLabel> = fold.iter().map(|&i| preds[i]).collect();
            ConfusionMatrix::from_labels(&t, &p)
                .map(|cm| macro_f1(&cm))
                .map_err(|e| ModelError::Container(e.to_string()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(EvalReport {
        macro_f1: macro_f1(&confusion),
        per_class: per_class_scores(&confusion),
        confusion,
        division_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{bspline_basis, silu, Activation, BSplineGrid};
    use crate::models::{
        build_model, ConvActivation, ConvBlock, ConvNetConfig, KanConfig, MlpConfig,
        PaddingMode,
    };
    use rand::{Rng, SeedableRng};

    fn toy_windows(n_per_class: usize, seed: u64) -> Vec<Window> {
        // linearly separable: class k raises channel k by a margin
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for k in 0..3usize {
            for i in 0..n_per_class {
                let mut data = vec![0.0; 10 * NUM_CHANNELS];
                for (j, v) in data.iter_mut().enumerate() {
                    *v = 0.3 * rng.random_range(-1.0..1.0);
                    if j % NUM_CHANNELS == k {
                        *v += 2.0;
                    }
                }
                out.push(Window {
                    data,
                    width: 10,
                    label: GaitLabel::from_index(k),
                    trial: format!("toy/{k}"),
                    start: i,
                });
            }
        }
        out
    }

    fn mlp_config() -> ModelConfig {
        ModelConfig {
            window_size: 10,
            spec: ModelSpec::Mlp(MlpConfig {
                hidden: vec![16],
                activation: Activation::Tanh,
                weight_decay: 1e-4,
            }),
        }
    }

    fn kan_config() -> ModelConfig {
        ModelConfig {
            window_size: 10,
            spec: ModelSpec::Kan(KanConfig {
                hidden: vec![8],
                grid_size: 5,
                spline_order: 3,
                l1_penalty: 1e-4,
            }),
        }
    }

    fn cnn_config(activation: ConvActivation) -> ModelConfig {
        ModelConfig {
            window_size: 10,
            spec: ModelSpec::Cnn(ConvNetConfig {
                blocks: vec![ConvBlock {
                    filters: 6,
                    kernel: 7,
                    padding: PaddingMode::Same,
                    pool: 2,
                }],
                conv_activation: activation,
                global_avg_pool: false,
                dropout: 0.3,
                classifier: vec![12],
                classifier_activation: Activation::Relu,
                learning_rate: 2e-3,
            }),
        }
    }

    #[test]
    fn untrained_predictions_are_a_distribution() {
        let model = build_model(&mlp_config(), 1).unwrap();
        let w = &toy_windows(1, 0)[0];
        let p = predict(&model, w).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let mut model = build_model(&mlp_config(), 1).unwrap();
        for p in model.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let w = &toy_windows(1, 0)[0];
        let p = predict(&model, w).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_window_size_rejected() {
        let model = build_model(&mlp_config(), 1).unwrap();
        let mut w = toy_windows(1, 0)[0].clone();
        w.width = 20;
        w.data = vec![0.0; 20 * NUM_CHANNELS];
        assert!(matches!(
            predict(&model, &w),
            Err(ModelError::InputShape { .. })
        ));
    }

    #[test]
    fn separable_toy_set_trains_to_low_loss() {
        let windows = toy_windows(20, 5);
        let weights = ClassWeights::uniform();
        let mut model = build_model(&mlp_config(), 0).unwrap();
        train(
            &mut model,
            &windows,
            &weights,
            &TrainOptions {
                epochs: 50,
                seed: 0,
                lr_override: Some(1e-2),
            },
        )
        .unwrap();
        assert_eq!(model.history.len(), 50);
        let initial = model.history[0];
        let last = *model.history.last().unwrap();
        assert!(
            last < 0.1 * initial,
            "loss {last} did not reach a tenth of {initial}"
        );
        let report = evaluate(&model, &windows).unwrap();
        assert!(report.macro_f1 > 0.95);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let windows = toy_windows(5, 2);
        let weights = ClassWeights::uniform();
        let mut model = build_model(&mlp_config(), 0).unwrap();
        let before: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
        train(
            &mut model,
            &windows,
            &weights,
            &TrainOptions {
                epochs: 10,
                seed: 0,
                lr_override: Some(0.0),
            },
        )
        .unwrap();
        for (b, p) in before.iter().zip(&model.params) {
            assert_eq!(b, &p.value);
        }
        let h0 = model.history[0];
        assert!(model.history.iter().all(|&h| h == h0));
    }

    #[test]
    fn same_seed_reproduces_parameters_exactly() {
        let windows = toy_windows(10, 3);
        let weights = ClassWeights::from_counts([10, 10, 10]).unwrap();
        let run = || {
            let mut model = build_model(&cnn_config(ConvActivation::Relu), 7).unwrap();
            train(
                &mut model,
                &windows,
                &weights,
                &TrainOptions {
                    epochs: 8,
                    seed: 11,
                    lr_override: None,
                },
            )
            .unwrap();
            model
        };
        let a = run();
        let b = run();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value, pb.value);
        }
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn dropout_only_active_during_training() {
        let windows = toy_windows(10, 4);
        let weights = ClassWeights::uniform();
        let mut model = build_model(&cnn_config(ConvActivation::Relu), 2).unwrap();
        train(&mut model, &windows, &weights, &TrainOptions {
            epochs: 5,
            seed: 1,
            lr_override: None,
        })
        .unwrap();
        // dropout randomizes the training loss trace but not inference
        let p1 = predict(&model, &windows[0]).unwrap();
        let p2 = predict(&model, &windows[0]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn missing_class_rejected() {
        let mut windows = toy_windows(5, 6);
        windows.retain(|w| w.label != GaitLabel::Sp);
        let mut model = build_model(&mlp_config(), 0).unwrap();
        assert!(matches!(
            train(
                &mut model,
                &windows,
                &ClassWeights::uniform(),
                &TrainOptions::default()
            ),
            Err(ModelError::MissingClass("SP"))
        ));
    }

    #[test]
    fn fkan_family_trains_and_improves() {
        let windows = toy_windows(15, 9);
        let weights = ClassWeights::uniform();
        let mut model = build_model(&cnn_config(ConvActivation::Fkan(3)), 0).unwrap();
        train(&mut model, &windows, &weights, &TrainOptions {
            epochs: 30,
            seed: 0,
            lr_override: Some(5e-3),
        })
        .unwrap();
        let report = evaluate(&model, &windows).unwrap();
        assert!(
            report.macro_f1 > 0.8,
            "fkan macro-F1 {}",
            report.macro_f1
        );
    }

    /// Second, independent forward implementation for the regression oracle:
    /// straight loops over the parameter tensors, no tape.
    fn mlp_forward_by_hand(model: &TrainedModel, window: &Window) -> [f64; 3] {
        let std_data = model.standardizer.apply(&window.data);
        let mut h = std_data;
        let layers = match &model.config.spec {
            ModelSpec::Mlp(m) => m.hidden.len() + 1,
            _ => unreachable!(),
        };
        let act = match &model.config.spec {
            ModelSpec::Mlp(m) => m.activation,
            _ => unreachable!(),
        };
        for i in 0..layers {
            let w = &model.params[2 * i].value;
            let b = &model.params[2 * i + 1].value;
            let (ni, no) = (w.shape()[0], w.shape()[1]);
            let mut next = vec![0.0; no];
            for o in 0..no {
                let mut acc = b.data()[o];
                for j in 0..ni {
                    acc += h[j] * w.data()[j * no + o];
                }
                next[o] = acc;
            }
            if i + 1 < layers {
                for v in next.iter_mut() {
                    *v = act.eval(*v);
                }
            }
            h = next;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        [0, 1, 2].map(|j| (h[j] - lse).exp())
    }

    fn kan_forward_by_hand(model: &TrainedModel, window: &Window) -> [f64; 3] {
        let (grid, layers) = match &model.config.spec {
            ModelSpec::Kan(k) => (
                BSplineGrid::symmetric(k.grid_size, k.spline_order).unwrap(),
                k.hidden.len() + 1,
            ),
            _ => unreachable!(),
        };
        let nb = grid.num_basis();
        let mut h = model.standardizer.apply(&window.data);
        for i in 0..layers {
            let wb = &model.params[3 * i].value;
            let ws = &model.params[3 * i + 1].value;
            let coef = &model.params[3 * i + 2].value;
            let (no, ni) = (wb.shape()[0], wb.shape()[1]);
            let mut next = vec![0.0; no];
            for o in 0..no {
                let mut acc = 0.0;
                for j in 0..ni {
                    let basis = bspline_basis(h[j].tanh(), &grid);
                    let mut spline = 0.0;
                    for b in 0..nb {
                        spline += coef.data()[(o * ni + j) * nb + b] * basis[b];
                    }
                    acc += wb.data()[o * ni + j] * silu(h[j])
                        + ws.data()[o * ni + j] * spline;
                }
                next[o] = acc;
            }
            h = next;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        [0, 1, 2].map(|j| (h[j] - lse).exp())
    }

    #[test]
    fn predict_matches_independent_forward_implementations() {
        let windows = toy_windows(8, 12);
        let weights = ClassWeights::uniform();
        let opts = TrainOptions {
            epochs: 10,
            seed: 0,
            lr_override: None,
        };

        let mut mlp = build_model(&mlp_config(), 42).unwrap();
        train(&mut mlp, &windows, &weights, &opts).unwrap();
        let got = predict(&mlp, &windows[3]).unwrap();
        let want = mlp_forward_by_hand(&mlp, &windows[3]);
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 1e-12,
                "mlp class {k}: {} vs {}",
                got[k],
                want[k]
            );
        }

        let mut kan = build_model(&kan_config(), 42).unwrap();
        train(&mut kan, &windows, &weights, &opts).unwrap();
        let got = predict(&kan, &windows[5]).unwrap();
        let want = kan_forward_by_hand(&kan, &windows[5]);
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 1e-12,
                "kan class {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let windows = toy_windows(6, 13);
        let mut model = build_model(&kan_config(), 3).unwrap();
        train(
            &mut model,
            &windows,
            &ClassWeights::uniform(),
            &TrainOptions {
                epochs: 5,
                seed: 0,
                lr_override: None,
            },
        )
        .unwrap();
        let json = model.to_json();
        let back = TrainedModel::from_json(&json).unwrap();
        for w in &windows {
            let a = predict(&model, w).unwrap();
            let b = predict(&back, w).unwrap();
            assert_eq!(a, b, "round-trip must preserve predictions exactly");
        }
    }

    #[test]
    fn corrupt_container_rejected() {
        let model = build_model(&mlp_config(), 0).unwrap();
        let mut json = model.to_json();
        json = json.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            TrainedModel::from_json(&json),
            Err(ModelError::Container(_))
        ));
    }

    #[test]
    fn evaluate_with_divisions_scores_each_fold() {
        let windows = toy_windows(40, 14);
        let mut model = build_model(&mlp_config(), 0).unwrap();
        train(
            &mut model,
            &windows,
            &ClassWeights::uniform(),
            &TrainOptions {
                epochs: 30,
                seed: 0,
                lr_override: Some(1e-2),
            },
        )
        .unwrap();
        let folds = crate::data::ten_divisions(&windows, 0).unwrap();
        let report = evaluate_with_divisions(&model, &windows, &folds).unwrap();
        assert_eq!(report.division_f1.len(), 10);
        for f in &report.division_f1 {
            assert!((0.0..=1.0).contains(f));
        }
    }
}
