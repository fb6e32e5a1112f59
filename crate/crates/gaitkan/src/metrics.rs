//! Confusion matrices, per-class and macro-average F1, and the
//! inverse-frequency class weights `w_k = n / (#C * n_k)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::GaitLabel;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("confusion: y_true has {0} entries but y_pred has {1}")]
    LengthMismatch(usize, usize),
    #[error("confusion: empty prediction set")]
    Empty,
    #[error("class weights undefined: class {0} has zero count")]
    ZeroCount(usize),
}

/// 3x3 confusion counts, true label on rows, predicted on columns, in label
/// order (SW, ST, SP).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_labels(
        y_true: &[GaitLabel],
        y_pred: &[GaitLabel],
    ) -> Result<Self, MetricsError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
        }
        if y_true.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (t, p) in y_true.iter().zip(y_pred) {
            counts[t.index()][p.index()] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row sums, i.e. per-class support.
    pub fn support(&self) -> [u64; NUM_CLASSES] {
        let mut s = [0u64; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            s[i] = row.iter().sum();
        }
        s
    }

    /// Rows normalized to sum to 1; rows with zero support stay all-zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for j in 0..NUM_CLASSES {
                    out[i][j] = row[j] as f64 / sum as f64;
                }
            }
        }
        out
    }
}

/// Precision, recall and F1 for one class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class scores in label order. A class with `precision + recall == 0`
/// (never predicted and never correctly recovered) gets F1 = 0.
pub fn per_class_scores(cm: &ConfusionMatrix) -> [ClassScores; NUM_CLASSES] {
    let mut out = [ClassScores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        let tp = cm.counts[k][k] as f64;
        let pred: u64 = (0..NUM_CLASSES).map(|i| cm.counts[i][k]).sum();
        let truth: u64 = cm.counts[k].iter().sum();
        let precision = if pred > 0 { tp / pred as f64 } else { 0.0 };
        let recall = if truth > 0 { tp / truth as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out[k] = ClassScores {
            precision,
            recall,
            f1,
        };
    }
    out
}

/// Unweighted mean of the three per-class F1 scores, in [0, 1].
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let scores = per_class_scores(cm);
    scores.iter().map(|s| s.f1).sum::<f64>() / NUM_CLASSES as f64
}

/// Inverse-frequency class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub counts: [u64; NUM_CLASSES],
    pub total: u64,
    pub weights: [f64; NUM_CLASSES],
}

impl ClassWeights {
    /// `w_k = n / (#C * n_k)`. Every class must be populated.
    pub fn from_counts(counts: [u64; NUM_CLASSES]) -> Result<Self, MetricsError> {
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(MetricsError::ZeroCount(k));
        }
        let total: u64 = counts.iter().sum();
        let mut weights = [0.0; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            weights[k] = total as f64 / (NUM_CLASSES as f64 * counts[k] as f64);
        }
        Ok(Self {
            counts,
            total,
            weights,
        })
    }

    pub fn uniform() -> Self {
        Self {
            counts: [1; NUM_CLASSES],
            total: 3,
            weights: [1.0; NUM_CLASSES],
        }
    }

    /// Verifies `sum_k w_k * n_k == n` exactly, in integer arithmetic before
    /// the final division. Each term `w_k * n_k` is the fraction
    /// `(n * n_k) / (C * n_k)`; over the common denominator `C * prod(n_j)`
    /// the sum must equal `n` exactly.
    pub fn weighted_total_is_exact(&self) -> bool {
        let n = u128::from(self.total);
        let c = NUM_CLASSES as u128;
        let prod: u128 = self.counts.iter().map(|&nk| u128::from(nk)).product();
        let den = c * prod;
        let mut num: u128 = 0;
        for k in 0..NUM_CLASSES {
            let nk = u128::from(self.counts[k]);
            let others: u128 = (0..NUM_CLASSES)
                .filter(|&j| j != k)
                .map(|j| u128::from(self.counts[j]))
                .product();
            // (n * n_k) / (C * n_k) brought onto the common denominator
            num += n * nk * others;
        }
        num == n * den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use GaitLabel::{Sp, St, Sw};

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = vec![Sw, Sw, St, Sp, Sp];
        let cm = ConfusionMatrix::from_labels(&y, &y).unwrap();
        assert_eq!(cm.counts, [[2, 0, 0], [0, 1, 0], [0, 0, 2]]);
        assert_eq!(macro_f1(&cm), 1.0);
        let norm = cm.row_normalized();
        for k in 0..3 {
            assert_eq!(norm[k][k], 1.0);
        }
    }

    #[test]
    fn all_predicted_sw_fills_first_column() {
        let y_true = vec![Sw, St, Sp, St];
        let y_pred = vec![Sw; 4];
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred).unwrap();
        for i in 0..3 {
            assert!(cm.counts[i][1] == 0 && cm.counts[i][2] == 0);
        }
        assert_eq!(cm.counts[0][0] + cm.counts[1][0] + cm.counts[2][0], 4);
    }

    #[test]
    fn hand_counted_case() {
        // y_true = (SW, SW, ST, SP), y_pred = (SW, ST, ST, SW)
        let cm = ConfusionMatrix::from_labels(&[Sw, Sw, St, Sp], &[Sw, St, St, Sw]).unwrap();
        assert_eq!(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 0]]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            ConfusionMatrix::from_labels(&[Sw], &[Sw, St]),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        // SP never predicted and never recovered
        let cm = ConfusionMatrix::from_labels(&[Sw, St, Sp], &[Sw, St, Sw]).unwrap();
        let scores = per_class_scores(&cm);
        assert_eq!(scores[2].f1, 0.0);
        assert!(macro_f1(&cm) < 0.8);
    }

    #[test]
    fn macro_f1_hand_computation() {
        // rows SW(8,1,1), ST(2,7,1), SP(1,1,8)
        let cm = ConfusionMatrix {
            counts: [[8, 1, 1], [2, 7, 1], [1, 1, 8]],
        };
        // independent hand computation of precision/recall per class
        let p = [8.0 / 11.0, 7.0 / 9.0, 8.0 / 10.0];
        let r = [0.8, 0.7, 0.8];
        let want: f64 = (0..3)
            .map(|k| 2.0 * p[k] * r[k] / (p[k] + r[k]))
            .sum::<f64>()
            / 3.0;
        let got = macro_f1(&cm);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.7659).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn macro_f1_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels = [Sw, St, Sp];
        for _ in 0..50 {
            let y_true: Vec<GaitLabel> =
                (0..60).map(|_| labels[rng.random_range(0..3)]).collect();
            let y_pred: Vec<GaitLabel> =
                (0..60).map(|_| labels[rng.random_range(0..3)]).collect();
            let base = macro_f1(&ConfusionMatrix::from_labels(&y_true, &y_pred).unwrap());
            // relabel consistently: SW -> ST -> SP -> SW
            let rot = |l: GaitLabel| match l {
                Sw => St,
                St => Sp,
                Sp => Sw,
            };
            let yt: Vec<GaitLabel> = y_true.iter().map(|&l| rot(l)).collect();
            let yp: Vec<GaitLabel> = y_pred.iter().map(|&l| rot(l)).collect();
            let rotated = macro_f1(&ConfusionMatrix::from_labels(&yt, &yp).unwrap());
            assert!((base - rotated).abs() < 1e-12);
        }
    }

    #[test]
    fn row_normalized_rows_sum_to_one() {
        let cm = ConfusionMatrix {
            counts: [[5, 2, 3], [0, 0, 0], [1, 1, 1]],
        };
        let norm = cm.row_normalized();
        assert!((norm[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(norm[1], [0.0; 3]); // zero support stays zero
        assert!((norm[2].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_weights_direct_substitution() {
        let w = ClassWeights::from_counts([60, 30, 10]).unwrap();
        assert!((w.weights[0] - 0.5556).abs() < 1e-4);
        assert!((w.weights[1] - 1.1111).abs() < 1e-4);
        assert!((w.weights[2] - 3.3333).abs() < 1e-4);
        assert!(w.weighted_total_is_exact());
    }

    #[test]
    fn balanced_counts_give_unit_weights() {
        let w = ClassWeights::from_counts([25, 25, 25]).unwrap();
        assert_eq!(w.weights, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_computed_from_paper_style_proportions() {
        // Counts mirroring 75.6 / 15.1 / 9.2 percent proportions. The exact
        // weights for these integer counts, from u128 rational arithmetic:
        let counts = [756u64, 151, 92];
        let n: u64 = counts.iter().sum();
        let w = ClassWeights::from_counts(counts).unwrap();
        for k in 0..3 {
            // oracle: n / (3 * n_k) computed through exact integer ratio
            let num = u128::from(n);
            let den = 3u128 * u128::from(counts[k]);
            let want = num as f64 / den as f64;
            assert!((w.weights[k] - want).abs() < 1e-12);
        }
        // and they sit close to the idealized per-proportion values
        // (0.4409, 2.2075, 3.6232); the published percentages only sum to
        // 99.9, so integer counts can differ from those ideals by ~4e-3.
        assert!((w.weights[0] - 0.4409).abs() < 5e-3);
        assert!((w.weights[1] - 2.2075).abs() < 5e-3);
        assert!((w.weights[2] - 3.6232).abs() < 5e-3);
    }

    #[test]
    fn weight_monotonicity_and_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let counts = [
                rng.random_range(1..5000u64),
                rng.random_range(1..5000u64),
                rng.random_range(1..5000u64),
            ];
            let w = ClassWeights::from_counts(counts).unwrap();
            assert!(w.weighted_total_is_exact());
            for a in 0..3 {
                for b in 0..3 {
                    if counts[a] < counts[b] {
                        assert!(w.weights[a] > w.weights[b]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(
            ClassWeights::from_counts([10, 0, 5]),
            Err(MetricsError::ZeroCount(1))
        ));
    }
}
