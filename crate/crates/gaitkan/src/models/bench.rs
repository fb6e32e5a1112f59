//! Wall-clock inference benchmarking.

use std::time::Instant;

use super::{predict, ModelError, TrainedModel};
use crate::data::Window;

const WARMUP: usize = 5;

/// Median wall-clock latency (seconds) of a single-window `predict`,
/// measured over `repetitions` timed calls after a short warm-up. Windows
/// are cycled when fewer than `repetitions` are supplied.
pub fn benchmark_inference(
    model: &TrainedModel,
    windows: &[Window],
    repetitions: usize,
) -> Result<f64, ModelError> {
    if repetitions < 30 {
        return Err(ModelError::BadRepetitions(repetitions));
    }
    if windows.is_empty() {
        return Err(ModelError::InputShape {
            expected: "at least one window".into(),
            got: "empty window set".into(),
        });
    }
    for i in 0..WARMUP {
        let _ = predict(model, &windows[i % windows.len()])?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for i in 0..repetitions {
        let w = &windows[i % windows.len()];
        let t0 = Instant::now();
        let p = predict(model, w)?;
        let dt = t0.elapsed().as_secs_f64();
        // keep the result alive so the call cannot be optimized out
        std::hint::black_box(p);
        times.push(dt);
    }
    times.sort_by(f64::total_cmp);
    let mid = repetitions / 2;
    let median = if repetitions % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Activation;
    use crate::data::{GaitLabel, NUM_CHANNELS};
    use crate::models::{build_model, MlpConfig, ModelConfig, ModelSpec};

    fn window() -> Window {
        Window {
            data: vec![0.1; 10 * NUM_CHANNELS],
            width: 10,
            label: GaitLabel::Sw,
            trial: "bench".into(),
            start: 0,
        }
    }

    fn model() -> crate::models::TrainedModel {
        build_model(
            &ModelConfig {
                window_size: 10,
                spec: ModelSpec::Mlp(MlpConfig {
                    hidden: vec![16],
                    activation: Activation::Tanh,
                    weight_decay: 1e-4,
                }),
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn latency_positive_and_stable() {
        let m = model();
        let w = [window()];
        let a = benchmark_inference(&m, &w, 50).unwrap();
        let b = benchmark_inference(&m, &w, 50).unwrap();
        assert!(a > 0.0 && b > 0.0);
        let ratio = if a > b { a / b } else { b / a };
        assert!(ratio < 3.0, "medians {a} vs {b} drifted by {ratio}x");
    }

    #[test]
    fn too_few_repetitions_rejected() {
        let m = model();
        assert!(matches!(
            benchmark_inference(&m, &[window()], 10),
            Err(ModelError::BadRepetitions(10))
        ));
    }
}
