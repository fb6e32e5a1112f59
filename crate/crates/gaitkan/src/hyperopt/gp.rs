//! Gaussian-process surrogate: Matérn-5/2 kernel on unit-cube inputs,
//! observation noise 1e-6, lengthscale picked from a small marginal-
//! likelihood grid around the median-distance heuristic.

use crate::special::{normal_cdf, normal_pdf};

const NOISE: f64 = 1e-6;

fn matern52(r: f64, lengthscale: f64) -> f64 {
    let s = 5f64.sqrt() * r / lengthscale;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// In-place Cholesky factorization (lower triangle); `None` if not positive
/// definite.
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Some(())
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l[i * n + k] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    x
}

fn solve_upper_from_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    // solves L^T x = b
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= l[k * n + i] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    x
}

/// A fitted GP posterior over standardized objective values.
pub struct Gp {
    xs: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    n: usize,
    lengthscale: f64,
    y_mean: f64,
    y_std: f64,
}

impl Gp {
    /// Fits on unit-cube inputs; `None` when the observations are degenerate
    /// (zero variance) or the kernel matrix defeats the factorization.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Option<Gp> {
        let n = xs.len();
        if n < 2 {
            return None;
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>() / n as f64;
        let y_std = var.sqrt();
        if y_std < 1e-12 {
            return None;
        }
        let yn: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();

        // median pairwise distance as the lengthscale anchor
        let mut dists = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(&xs[i], &xs[j]);
                if d > 0.0 {
                    dists.push(d);
                }
            }
        }
        if dists.is_empty() {
            return None;
        }
        dists.sort_by(f64::total_cmp);
        let median = dists[dists.len() / 2];

        let mut best: Option<(f64, Gp)> = None;
        for factor in [0.5, 1.0, 2.0, 4.0] {
            let lengthscale = median * factor;
            let Some(gp) = Self::fit_fixed(xs, &yn, lengthscale, y_mean, y_std) else {
                continue;
            };
            let lml = gp.log_marginal_likelihood(&yn);
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, gp));
            }
        }
        best.map(|(_, gp)| gp)
    }

    fn fit_fixed(
        xs: &[Vec<f64>],
        yn: &[f64],
        lengthscale: f64,
        y_mean: f64,
        y_std: f64,
    ) -> Option<Gp> {
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = matern52(distance(&xs[i], &xs[j]), lengthscale);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += NOISE;
        }
        cholesky(&mut k, n)?;
        let tmp = solve_lower(&k, n, yn);
        let alpha = solve_upper_from_lower(&k, n, &tmp);
        Some(Gp {
            xs: xs.to_vec(),
            chol: k,
            alpha,
            n,
            lengthscale,
            y_mean,
            y_std,
        })
    }

    fn log_marginal_likelihood(&self, yn: &[f64]) -> f64 {
        let fit: f64 = yn.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        let logdet: f64 = (0..self.n)
            .map(|i| self.chol[i * self.n + i].ln())
            .sum();
        -0.5 * fit - logdet - 0.5 * self.n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and standard deviation in the original objective units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let kx: Vec<f64> = self
            .xs
            .iter()
            .map(|xi| matern52(distance(x, xi), self.lengthscale))
            .collect();
        let mean_n: f64 = kx.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = solve_lower(&self.chol, self.n, &kx);
        let var_n = (1.0 + NOISE - v.iter().map(|vi| vi * vi).sum::<f64>()).max(1e-12);
        (
            self.y_mean + self.y_std * mean_n,
            self.y_std * var_n.sqrt(),
        )
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if std <= 0.0 {
        return (mean - best).max(0.0);
    }
    let z = (mean - best) / std;
    (mean - best) * normal_cdf(z) + std * normal_pdf(z)
}
