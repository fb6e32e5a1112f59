//! Paired hypothesis tests: exact one-tailed Wilcoxon signed-rank, one-tailed
//! paired t with Student-t tail probabilities, a one-sided JZS Bayes factor,
//! and the harness that runs them over paired division scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{ln_gamma, reg_inc_beta};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("paired scores must have equal lengths, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} non-zero differences, got {got}")]
    TooFewPairs { min: usize, got: usize },
    #[error("all differences are zero")]
    AllZeroDifferences,
    #[error("degenerate differences (zero standard deviation)")]
    DegenerateDifferences,
    #[error("exact enumeration supports n <= {max}, got {got}")]
    EnumerationTooLarge { max: usize, got: usize },
    #[error("numerical integration did not converge: {0}")]
    IntegrationFailed(String),
    #[error("paired design violated: fold checksums differ ({0:#x} vs {1:#x})")]
    MismatchedFolds(u64, u64),
}

/// Two paired score vectors; the tests evaluate the one-sided alternative
/// "A > B".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedScores {
    pub label_a: String,
    pub label_b: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedScores {
    pub fn new(
        label_a: impl Into<String>,
        label_b: impl Into<String>,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        Ok(Self {
            label_a: label_a.into(),
            label_b: label_b.into(),
            a,
            b,
        })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

/// Outcome of a one-sided test (direction: A > B).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n_used: usize,
    pub direction: String,
}

/// Average ranks of |d|, ties sharing the mean of their positions.
fn average_ranks(abs_d: &[f64]) -> Vec<f64> {
    let n = abs_d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| abs_d[i].partial_cmp(&abs_d[j]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact one-tailed Wilcoxon signed-rank test of "A > B".
///
/// Differences of zero are dropped; |d| is ranked with average ranks for
/// ties; `W+` is the rank sum of the positive differences; the one-sided p
/// is `P(W+_null >= W+_obs)` by full enumeration of all `2^n` sign
/// assignments (requires `n <= 25` after the zero-drop; the protocol's
/// n = 10 gives 1024 terms).
pub fn wilcoxon_one_tailed(pairs: &PairedScores) -> Result<TestResult, StatsError> {
    const MIN_N: usize = 5;
    const MAX_N: usize = 25;
    let d: Vec<f64> = pairs
        .differences()
        .into_iter()
        .filter(|v| *v != 0.0)
        .collect();
    if d.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    if d.len() < MIN_N {
        return Err(StatsError::TooFewPairs {
            min: MIN_N,
            got: d.len(),
        });
    }
    if d.len() > MAX_N {
        return Err(StatsError::EnumerationTooLarge {
            max: MAX_N,
            got: d.len(),
        });
    }
    let n = d.len();
    let abs_d: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs_d);
    let w_obs: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    // All ranks are multiples of 0.5, so rank sums are exact in f64 and the
    // >= comparison below is exact.
    let mut at_least = 0u64;
    for mask in 0u64..(1u64 << n) {
        let mut w = 0.0;
        for (i, r) in ranks.iter().enumerate() {
            if mask >> i & 1 == 1 {
                w += r;
            }
        }
        if w >= w_obs {
            at_least += 1;
        }
    }
    let p = at_least as f64 / (1u64 << n) as f64;
    Ok(TestResult {
        method: "wilcoxon-signed-rank-exact".into(),
        statistic: w_obs,
        p_value: p,
        n_used: n,
        direction: format!("{} > {}", pairs.label_a, pairs.label_b),
    })
}

fn mean_and_sd(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Upper-tail probability `P(T >= t)` of Student's t with `df` degrees of
/// freedom, through the regularized incomplete beta function.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let half = 0.5 * reg_inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// One-tailed paired t-test of "A > B": `t = mean(d) / (sd(d)/sqrt(n))`,
/// `df = n - 1`, p from the Student-t upper tail.
pub fn paired_t_one_tailed(pairs: &PairedScores) -> Result<TestResult, StatsError> {
    let d = pairs.differences();
    if d.len() < 2 {
        return Err(StatsError::TooFewPairs { min: 2, got: d.len() });
    }
    let (mean, sd) = mean_and_sd(&d);
    if sd == 0.0 {
        return Err(StatsError::DegenerateDifferences);
    }
    let n = d.len() as f64;
    let t = mean / (sd / n.sqrt());
    let p = student_t_sf(t, n - 1.0);
    Ok(TestResult {
        method: "paired-t-one-tailed".into(),
        statistic: t,
        p_value: p,
        n_used: d.len(),
        direction: format!("{} > {}", pairs.label_a, pairs.label_b),
    })
}

/// Online log-sum-exp accumulator for sums of positive terms given in logs.
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn add(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term <= self.max {
            self.scaled += (log_term - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - log_term).exp() + 1.0;
            self.max = log_term;
        }
    }

    fn ln_value(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Log of the noncentral-t density at `x` with `df` degrees of freedom and
/// noncentrality `mu`.
///
/// For `x * mu >= 0` the series
/// `f(x) = C * sum_j Gamma((df+j+1)/2)/j! * q^j` with
/// `q = x mu sqrt(2)/sqrt(df+x^2)` has positive terms and sums safely in
/// log space even for the large noncentralities the Bayes-factor quadrature
/// visits. For `x * mu < 0` the series alternates with catastrophic
/// cancellation, so the definitional integral over the scaled-chi
/// denominator is integrated instead (all-positive integrand; these are the
/// tiny wrong-direction densities).
fn log_noncentral_t_pdf(x: f64, df: f64, mu: f64) -> f64 {
    let q = x * mu * std::f64::consts::SQRT_2 / (df + x * x).sqrt();
    if q < 0.0 {
        return log_nct_pdf_by_quadrature(x, df, mu);
    }
    let base = 0.5 * df * df.ln() - 0.5 * mu * mu - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * df)
        - 0.5 * (df + 1.0) * (df + x * x).ln();
    if q == 0.0 {
        return base + ln_gamma(0.5 * (df + 1.0));
    }
    let lnq = q.ln();
    let mut acc = LogSum::new();
    // Terms split into even/odd chains so the recurrence steps the gamma
    // argument by whole integers:
    // T_{j+2}/T_j = q^2 (df+j+1) / (2 (j+1)(j+2)).
    for start in 0..2usize {
        let mut j = start as f64;
        let mut lt = if start == 0 {
            ln_gamma(0.5 * (df + 1.0))
        } else {
            ln_gamma(0.5 * (df + 2.0)) + lnq
        };
        loop {
            acc.add(lt);
            lt += 2.0 * lnq + ((df + j + 1.0) / (2.0 * (j + 1.0) * (j + 2.0))).ln();
            j += 2.0;
            // terms peak near j = q^2/2 and decay factorially after
            if (j > 0.5 * q * q + 4.0 * q + 20.0 && lt < acc.max - 46.0) || j > 400_000.0 {
                break;
            }
        }
    }
    base + acc.ln_value()
}

/// `ln f_T(x)` for `T = (Z + mu) / sqrt(chi2_df / df)` by composite Simpson
/// over the denominator scale `w`, accumulated in log space:
/// `f(x) = int_0^inf w phi(x w - mu) f_W(w) dw`.
fn log_nct_pdf_by_quadrature(x: f64, df: f64, mu: f64) -> f64 {
    let k = 0.5 * df;
    let ln_fw_base = 2f64.ln() + k * k.ln() - ln_gamma(k);
    let ln_phi_base = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_integrand = |w: f64| -> f64 {
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = x * w - mu;
        w.ln() + ln_phi_base - 0.5 * z * z + ln_fw_base + (df - 1.0) * w.ln() - k * w * w
    };
    // f_W is negligible beyond w = 8 for every df >= 1
    let (lo, hi) = (0.0, 8.0);
    let m = 8000usize; // even
    let h = (hi - lo) / m as f64;
    let mut acc = LogSum::new();
    for i in 0..=m {
        let w = lo + i as f64 * h;
        let coeff: f64 = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc.add(log_integrand(w) + coeff.ln());
    }
    acc.ln_value() + (h / 3.0).ln()
}

fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    depth: usize,
) -> Result<f64, StatsError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * rel_tol * (left + right).abs().max(1e-300) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(StatsError::IntegrationFailed(format!(
            "adaptive quadrature recursion limit on [{a}, {b}]"
        )));
    }
    Ok(
        adaptive_simpson(f, a, m, fa, flm, fm, left, rel_tol, depth - 1)?
            + adaptive_simpson(f, m, b, fm, frm, fb, right, rel_tol, depth - 1)?,
    )
}

fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64, StatsError> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, rel_tol, 40)
}

/// One-sided JZS Bayes factor `BF10` for "effect > 0" with a Cauchy prior of
/// scale `r` on the standardized effect size.
///
/// The marginal likelihood under H1 integrates the noncentral-t likelihood
/// against the positive half-Cauchy; substituting `delta = r tan(theta)`
/// turns the prior into the uniform density 2/pi on [0, pi/2), which the
/// adaptive quadrature then integrates at relative tolerance 1e-6.
pub fn jzs_bayes_factor(pairs: &PairedScores, scale: f64) -> Result<f64, StatsError> {
    let d = pairs.differences();
    if d.len() < 2 {
        return Err(StatsError::TooFewPairs { min: 2, got: d.len() });
    }
    let (mean, sd) = mean_and_sd(&d);
    if sd == 0.0 {
        return Err(StatsError::DegenerateDifferences);
    }
    let n = d.len() as f64;
    let t = mean / (sd / n.sqrt());
    let df = n - 1.0;
    let log_null = log_noncentral_t_pdf(t, df, 0.0);
    let integrand = move |theta: f64| -> f64 {
        if theta >= std::f64::consts::FRAC_PI_2 {
            return 0.0;
        }
        let delta = scale * theta.tan();
        let mu = delta * n.sqrt();
        (log_noncentral_t_pdf(t, df, mu) - log_null).exp()
    };
    // The likelihood of noncentralities far beyond |t| is astronomically
    // small, so the Cauchy tail past mu_max contributes nothing at the
    // requested tolerance; capping theta keeps the series summation short.
    let mu_max = 2.0 * t.abs() + 50.0;
    let theta_max = (mu_max / (n.sqrt() * scale)).atan();
    let ratio = integrate(integrand, 0.0, theta_max, 1e-6)?;
    let bf = 2.0 / std::f64::consts::PI * ratio;
    if !bf.is_finite() {
        return Err(StatsError::IntegrationFailed(format!(
            "non-finite Bayes factor {bf}"
        )));
    }
    Ok(bf)
}

/// Per-subject outcome of one paired comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestOutcome {
    Result {
        #[serde(flatten)]
        result: TestResult,
        significant: bool,
    },
    /// Degenerate input (e.g. identical score vectors): the harness reports
    /// the absence of evidence explicitly instead of a p-value.
    NoEvidence { reason: String },
}

/// One subject's paired division scores for a single comparison, with the
/// fold checksums that prove both conditions used identical test divisions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectComparison {
    pub subject: String,
    pub scores: PairedScores,
    pub checksum_a: u64,
    pub checksum_b: u64,
}

/// Harness output: per-subject Wilcoxon plus the across-subject paired
/// t-test (and optional Bayes factor) on per-subject mean scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessReport {
    pub comparison: String,
    pub per_subject: Vec<(String, TestOutcome)>,
    pub across_subjects: TestOutcome,
    pub bayes_factor_10: Option<f64>,
    pub alpha: f64,
}

/// Runs the paired protocol for one comparison (e.g. "KAN vs MLP" or
/// "specific vs pooled"): a one-tailed Wilcoxon per subject over the ten
/// division scores, then a one-tailed paired t-test across subjects on the
/// per-subject means, with an optional JZS Bayes factor.
///
/// Every subject's two conditions must carry identical fold checksums;
/// mismatches are rejected rather than silently compared.
pub fn hypothesis_harness(
    comparison: &str,
    subjects: &[SubjectComparison],
    with_bayes: bool,
) -> Result<HarnessReport, StatsError> {
    const ALPHA: f64 = 0.05;
    if subjects.is_empty() {
        return Err(StatsError::TooFewPairs { min: 1, got: 0 });
    }
    let mut per_subject = Vec::with_capacity(subjects.len());
    let mut mean_a = Vec::with_capacity(subjects.len());
    let mut mean_b = Vec::with_capacity(subjects.len());
    for s in subjects {
        if s.checksum_a != s.checksum_b {
            return Err(StatsError::MismatchedFolds(s.checksum_a, s.checksum_b));
        }
        let outcome = match wilcoxon_one_tailed(&s.scores) {
            Ok(result) => {
                let significant = result.p_value < ALPHA;
                TestOutcome::Result {
                    result,
                    significant,
                }
            }
            Err(StatsError::AllZeroDifferences) => TestOutcome::NoEvidence {
                reason: "no evidence: all paired differences are zero".into(),
            },
            Err(StatsError::TooFewPairs { min, got }) => TestOutcome::NoEvidence {
                reason: format!(
                    "no evidence: only {got} non-zero differences (need {min})"
                ),
            },
            Err(e) => return Err(e),
        };
        per_subject.push((s.subject.clone(), outcome));
        let na = s.scores.a.len() as f64;
        let nb = s.scores.b.len() as f64;
        mean_a.push(s.scores.a.iter().sum::<f64>() / na);
        mean_b.push(s.scores.b.iter().sum::<f64>() / nb);
    }
    let label_a = subjects[0].scores.label_a.clone();
    let label_b = subjects[0].scores.label_b.clone();
    let across_pairs = PairedScores::new(label_a, label_b, mean_a, mean_b)?;
    let across = match paired_t_one_tailed(&across_pairs) {
        Ok(result) => {
            let significant = result.p_value < ALPHA;
            TestOutcome::Result {
                result,
                significant,
            }
        }
        Err(StatsError::DegenerateDifferences) => TestOutcome::NoEvidence {
            reason: "no evidence: across-subject differences are degenerate".into(),
        },
        Err(e) => return Err(e),
    };
    let bayes_factor_10 = if with_bayes {
        match jzs_bayes_factor(&across_pairs, std::f64::consts::SQRT_2 / 2.0) {
            Ok(bf) => Some(bf),
            Err(StatsError::DegenerateDifferences) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(HarnessReport {
        comparison: comparison.to_string(),
        per_subject,
        across_subjects: across,
        bayes_factor_10,
        alpha: ALPHA,
    })
}
