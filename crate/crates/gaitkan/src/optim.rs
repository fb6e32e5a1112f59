//! Trainable parameters, the Adam optimizer and the central-difference
//! gradient checker.

use crate::tape::{NodeId, Tape};
use crate::tensor::{NumError, Tensor};

/// A trainable value together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        let mut p = Self::new(value);
        p.requires_grad = false;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Adam with bias correction. Moment state persists across calls and is
/// sized lazily on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_hyperparams(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(lr: f64, beta1: f64, beta2: f64, eps_hat: f64) -> Self {
        assert!(lr >= 0.0 && eps_hat > 0.0);
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        Self {
            lr,
            beta1,
            beta2,
            eps_hat,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over all parameters with `requires_grad`. Rejects the step
    /// (leaving parameters untouched) if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<(), NumError> {
        for (index, p) in params.iter().enumerate() {
            if p.requires_grad && !p.grad.all_finite() {
                return Err(NumError::NonFiniteGradient { index });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.data();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut value = std::mem::replace(&mut p.value, Tensor::scalar(0.0));
            {
                let w = value.data_mut();
                for i in 0..w.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
                }
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Maximum relative disagreement between the analytic gradient of
/// `params[target]` and a central finite difference with step `eps`.
///
/// `build` must construct the same scalar-rooted graph each call, taking the
/// parameter leaves in order. The relative error of entry `i` is
/// `|analytic - central| / max(|analytic|, |central|, 1e-12)`.
pub fn finite_diff_check<F>(
    build: F,
    params: &mut [Parameter],
    target: usize,
    eps: f64,
) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumError>,
{
    if !(eps > 0.0) {
        return Err(NumError::Invalid(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let forward = |params: &[Parameter]| -> Result<(Tape, Vec<NodeId>, NodeId), NumError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let root = build(&mut tape, &ids)?;
        if !tape.value(root).is_scalar() {
            return Err(NumError::NonScalarRoot(
                tape.value(root).shape().to_vec(),
            ));
        }
        Ok((tape, ids, root))
    };

    let (tape, ids, root) = forward(params)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<f64> = match grads.wrt(ids[target]) {
        Some(t) => t.data().to_vec(),
        None => vec![0.0; params[target].value.len()],
    };
    drop(tape);

    let mut max_rel: f64 = 0.0;
    for i in 0..params[target].value.len() {
        let orig = params[target].value.data()[i];
        params[target].value.data_mut()[i] = orig + eps;
        let f_plus = {
            let (tape, _, root) = forward(params)?;
            tape.value(root).item()
        };
        params[target].value.data_mut()[i] = orig - eps;
        let f_minus = {
            let (tape, _, root) = forward(params)?;
            tape.value(root).item()
        };
        params[target].value.data_mut()[i] = orig;
        let central = (f_plus - f_minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(central.abs()).max(1e-12);
        max_rel = max_rel.max((analytic[i] - central).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Parameter::new(Tensor::from_vec(vec![2], vec![1.5, -2.0]).unwrap())];
        let mut adam = Adam::new(0.1);
        adam.step(&mut params).unwrap();
        assert_eq!(params[0].value.data(), &[1.5, -2.0]);
    }

    #[test]
    fn quadratic_converges_to_minimum() {
        // f(w) = (w - 2)^2, lr = 0.1, 200 steps
        let mut params = vec![Parameter::new(Tensor::scalar(0.0))];
        let mut adam = Adam::new(0.1);
        // Independent reference Adam run with the same hyperparameters.
        let (mut rw, mut rm, mut rv) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let w = params[0].value.item();
            let g = 2.0 * (w - 2.0);
            params[0].grad = Tensor::scalar(g);
            adam.step(&mut params).unwrap();

            let rg = 2.0 * (rw - 2.0);
            rm = 0.9 * rm + 0.1 * rg;
            rv = 0.999 * rv + 0.001 * rg * rg;
            let mh = rm / (1.0 - 0.9f64.powi(t));
            let vh = rv / (1.0 - 0.999f64.powi(t));
            rw -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let w = params[0].value.item();
        assert!((w - 2.0).abs() < 1e-2, "w = {w}");
        assert!((w - rw).abs() < 1e-12, "implementation drifted from reference: {w} vs {rw}");
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // bias-corrected first step: delta = lr * g / (|g| + eps_hat)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g: f64 = rng.random_range(-3.0..3.0);
            if g == 0.0 {
                continue;
            }
            let mut params = vec![Parameter::new(Tensor::scalar(1.0))];
            params[0].grad = Tensor::scalar(g);
            let mut adam = Adam::new(0.05);
            adam.step(&mut params).unwrap();
            let delta = params[0].value.item() - 1.0;
            let want = -0.05 * g / (g.abs() + 1e-8);
            assert!((delta - want).abs() < 1e-15);
            // |delta| sits within lr * eps_hat/(|g|+eps_hat) of lr
            let slack = 0.05 * 1e-8 / (g.abs() + 1e-8);
            assert!((delta.abs() - 0.05).abs() <= slack + 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_rejected_with_index() {
        let mut params = vec![
            Parameter::new(Tensor::scalar(0.0)),
            Parameter::new(Tensor::scalar(0.0)),
        ];
        params[1].grad = Tensor::scalar(f64::NAN);
        let mut adam = Adam::new(0.1);
        match adam.step(&mut params) {
            Err(NumError::NonFiniteGradient { index }) => assert_eq!(index, 1),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn moment_state_persists_across_calls() {
        // Two steps with the same gradient move farther than one, and the
        // second step differs from the first (momentum is accumulating).
        let mut params = vec![Parameter::new(Tensor::scalar(0.0))];
        params[0].grad = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1);
        adam.step(&mut params).unwrap();
        let after_one = params[0].value.item();
        params[0].grad = Tensor::scalar(1.0);
        adam.step(&mut params).unwrap();
        let after_two = params[0].value.item();
        assert!(after_two < after_one && after_one < 0.0);
    }

    #[test]
    fn finite_diff_on_linear_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt = Tensor::from_vec(vec![4, 3], x).unwrap();
        let mut params = vec![Parameter::new(
            Tensor::from_vec(vec![3, 2], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
        )];
        let err = finite_diff_check(
            move |tape, ids| {
                let xi = tape.constant(xt.clone());
                let y = tape.matmul(xi, ids[0])?;
                Ok(tape.sum(y))
            },
            &mut params,
            0,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "linear map rel err {err}");
    }

    #[test]
    fn finite_diff_relu_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vals = Vec::new();
        while vals.len() < 8 {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v.abs() > 1e-3 {
                vals.push(v);
            }
        }
        let mut params = vec![Parameter::new(Tensor::from_vec(vec![8], vals).unwrap())];
        let err = finite_diff_check(
            |tape, ids| {
                let y = tape.relu(ids[0]);
                Ok(tape.sum(y))
            },
            &mut params,
            0,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "relu rel err {err}");
    }

    #[test]
    fn finite_diff_constant_graph_is_zero() {
        let mut params = vec![Parameter::new(Tensor::scalar(1.0))];
        let err = finite_diff_check(
            |tape, _ids| Ok(tape.constant(Tensor::scalar(5.0))),
            &mut params,
            0,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_diff_rejects_bad_eps() {
        let mut params = vec![Parameter::new(Tensor::scalar(1.0))];
        assert!(finite_diff_check(
            |tape, ids| Ok(tape.sum(ids[0])),
            &mut params,
            0,
            0.0
        )
        .is_err());
    }
}
