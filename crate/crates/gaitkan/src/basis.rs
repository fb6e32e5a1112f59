//! Mathematical core of the KAN and FKAN edges: B-spline bases on a uniform
//! extended knot vector (Cox–de Boor), Jacobi polynomials with derivatives,
//! the fractional sigmoid input transform and the static activations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid B-spline grid: {0}")]
    InvalidGrid(String),
    #[error("jacobi_eval: x = {0} outside [-1, 1]")]
    Domain(f64),
    #[error("jacobi_eval: exponents must satisfy alpha, beta > -1, got ({0}, {1})")]
    InvalidExponents(f64, f64),
    #[error("fractional transform: lambda = {0} outside (0, 1]")]
    InvalidLambda(f64),
    #[error("unknown activation `{0}` (expected tanh, relu or silu)")]
    UnknownActivation(String),
}

/// Uniform B-spline grid on `[a, b]` with `intervals` knot spans, spline
/// degree `order`, and `order` extra uniformly spaced knots on each side.
///
/// The extended knot vector has `intervals + 2*order + 1` entries and carries
/// `intervals + order` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineGrid {
    a: f64,
    b: f64,
    intervals: usize,
    order: usize,
    knots: Vec<f64>,
}

impl BSplineGrid {
    pub fn new(a: f64, b: f64, intervals: usize, order: usize) -> Result<Self, BasisError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(BasisError::InvalidGrid(format!(
                "domain [{a}, {b}] must be a finite non-empty interval"
            )));
        }
        if intervals == 0 {
            return Err(BasisError::InvalidGrid("grid size must be >= 1".into()));
        }
        let h = (b - a) / intervals as f64;
        let count = intervals + 2 * order + 1;
        let knots = (0..count)
            .map(|i| a + (i as f64 - order as f64) * h)
            .collect();
        Ok(Self {
            a,
            b,
            intervals,
            order,
            knots,
        })
    }

    /// Standard KAN grid on [-1, 1].
    pub fn symmetric(intervals: usize, order: usize) -> Result<Self, BasisError> {
        Self::new(-1.0, 1.0, intervals, order)
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot-span index `s` with `knots[s] <= x < knots[s+1]`, restricted to
    /// the domain spans `[order, order + intervals - 1]`; `x = b` falls in
    /// the last span.
    fn span(&self, x: f64) -> usize {
        let h = (self.b - self.a) / self.intervals as f64;
        let raw = ((x - self.a) / h).floor() as isize;
        let clamped = raw.clamp(0, self.intervals as isize - 1) as usize;
        clamped + self.order
    }
}

/// Evaluates all `G + k` basis functions at `x`.
///
/// `x` outside `[a, b]` is clamped to the domain boundary first, so this is a
/// total function of x.
pub fn bspline_basis(x: f64, grid: &BSplineGrid) -> Vec<f64> {
    bspline_basis_and_deriv(x, grid).0
}

/// Basis values and their derivatives w.r.t. `x`.
///
/// For `x` strictly outside the domain the clamp makes the composite function
/// constant, so the derivative is zero there; at the boundary itself the
/// interior one-sided derivative is returned.
pub fn bspline_basis_and_deriv(x: f64, grid: &BSplineGrid) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = grid.domain();
    let clamped_outside = x < a || x > b;
    let x = x.clamp(a, b);
    let k = grid.order;
    let nb = grid.num_basis();
    let t = &grid.knots;
    let s = grid.span(x);

    // de Boor triangular scheme: local[r] = B_{s-j+r, j} after round j.
    let mut local = vec![0.0; k + 1];
    local[0] = 1.0;
    let mut left = vec![0.0; k + 1];
    let mut right = vec![0.0; k + 1];
    let mut lower = vec![0.0; k.max(1)]; // degree k-1 values, kept for the derivative
    for j in 1..=k {
        if j == k {
            lower[..k].copy_from_slice(&local[..k]);
        }
        left[j] = x - t[s + 1 - j];
        right[j] = t[s + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = local[r] / denom;
            local[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        local[j] = saved;
    }

    let mut values = vec![0.0; nb];
    let first = s - k;
    values[first..=s].copy_from_slice(&local[..=k]);

    let mut derivs = vec![0.0; nb];
    if k > 0 && !clamped_outside {
        // dB_{i,k}/dx = k * ( B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}) ).
        // Degree k-1 values are nonzero for indices s-k+1 ..= s.
        let low = |i: usize| -> f64 {
            if i >= s + 1 - k && i <= s {
                lower[i - (s + 1 - k)]
            } else {
                0.0
            }
        };
        let kf = k as f64;
        for i in first..=s {
            let d1 = low(i) / (t[i + k] - t[i]);
            let d2 = low(i + 1) / (t[i + k + 1] - t[i + 1]);
            derivs[i] = kf * (d1 - d2);
        }
    }
    (values, derivs)
}

/// Jacobi polynomials `P_0^{(alpha,beta)}(x) ..= P_d^{(alpha,beta)}(x)` by the
/// three-term recurrence. Requires `alpha, beta > -1` and `|x| <= 1`.
pub fn jacobi_eval(degree: usize, alpha: f64, beta: f64, x: f64) -> Result<Vec<f64>, BasisError> {
    if !(alpha > -1.0 && beta > -1.0) {
        return Err(BasisError::InvalidExponents(alpha, beta));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(BasisError::Domain(x));
    }
    let (vals, _) = jacobi_eval_with_deriv(degree, alpha, beta, x);
    Ok(vals)
}

/// Jacobi values and x-derivatives, obtained by differentiating the
/// recurrence in lockstep. Callers guarantee the domain; no checks here.
pub fn jacobi_eval_with_deriv(
    degree: usize,
    alpha: f64,
    beta: f64,
    x: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; degree + 1];
    let mut dp = vec![0.0; degree + 1];
    p[0] = 1.0;
    if degree == 0 {
        return (p, dp);
    }
    p[1] = 0.5 * (alpha + beta + 2.0) * x + 0.5 * (alpha - beta);
    dp[1] = 0.5 * (alpha + beta + 2.0);
    for n in 2..=degree {
        let nf = n as f64;
        let apb = alpha + beta;
        let a_n = 2.0 * nf * (nf + apb) * (2.0 * nf + apb - 2.0);
        let b_n = (2.0 * nf + apb - 1.0) * (2.0 * nf + apb) * (2.0 * nf + apb - 2.0);
        let c_n = (2.0 * nf + apb - 1.0) * (alpha * alpha - beta * beta);
        let d_n = 2.0 * (nf + alpha - 1.0) * (nf + beta - 1.0) * (2.0 * nf + apb);
        p[n] = ((b_n * x + c_n) * p[n - 1] - d_n * p[n - 2]) / a_n;
        dp[n] = (b_n * p[n - 1] + (b_n * x + c_n) * dp[n - 1] - d_n * dp[n - 2]) / a_n;
    }
    (p, dp)
}

/// Numerically stable `ln(sigmoid(x))`.
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fractional input transform `sigmoid(x)^lambda` onto (0, 1].
pub fn fractional_transform(x: f64, lambda: f64) -> Result<f64, BasisError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(BasisError::InvalidLambda(lambda));
    }
    Ok((lambda * ln_sigmoid(x)).exp())
}

/// Value of the fractional transform together with its partial derivatives
/// w.r.t. `x` and `lambda`. The `lambda` partial `T * ln(sigmoid(x))`
/// underflows to zero (never NaN) as `x -> -inf`.
pub fn fractional_transform_grads(x: f64, lambda: f64) -> (f64, f64, f64) {
    let s = ln_sigmoid(x);
    let value = (lambda * s).exp();
    let sig = sigmoid(x);
    let d_dx = lambda * value * (1.0 - sig);
    let d_dlambda = value * s;
    (value, d_dx, d_dlambda)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// The static activations the MLP and CNN classifier heads choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self, BasisError> {
        match name.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "silu" => Ok(Self::Silu),
            other => Err(BasisError::UnknownActivation(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Silu => "silu",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
            Self::Silu => silu(x),
        }
    }

    /// Derivative; the ReLU kink at 0 is assigned slope 0.
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - x.tanh() * x.tanh(),
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Silu => silu_grad(x),
        }
    }
}
