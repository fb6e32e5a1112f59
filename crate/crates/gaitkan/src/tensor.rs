//! Dense row-major f64 tensors.
//!
//! Data is shared through an [`Arc`] so that putting a tensor on the tape, or
//! capturing it in a backward closure, is a pointer bump rather than a copy.
//! Mutation goes through [`Tensor::data_mut`], which is copy-on-write.

use std::fmt;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised by the numeric engine.
#[derive(Debug, Error)]
pub enum NumError {
    /// An op received operands whose shapes do not conform to its signature.
    #[error("op `{op}`: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    /// `backward` was called on a non-scalar node.
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    /// Shape/data length disagreement at construction.
    #[error("data length {data_len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, data_len: usize },
    /// A shape with a zero extent.
    #[error("shape extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    /// Optimizer found a non-finite gradient.
    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },
    /// Catch-all for bad arguments (e.g. non-positive finite-difference step).
    #[error("{0}")]
    Invalid(String),
}

/// A dense tensor of 64-bit floats in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `product(shape) == data.len()` and that
    /// every extent is positive.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(NumError::ZeroExtent(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumError::LengthMismatch {
                shape,
                data_len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// All-zeros tensor. Panics on a zero extent (programmer error).
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.iter().all(|&e| e > 0),
            "zero extent in shape {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
        }
    }

    /// All-ones tensor.
    pub fn ones(shape: &[usize]) -> Self {
        let mut t = Self::zeros(shape);
        t.data_mut().fill(1.0);
        t
    }

    /// 1-element tensor holding `v`.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy-on-write mutable access to the underlying values.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor. Panics otherwise.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Same data viewed under a new shape of equal total length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, NumError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(NumError::ZeroExtent(shape));
        }
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumError::LengthMismatch {
                shape,
                data_len: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data())
        } else {
            write!(
                f,
                "Tensor{:?}[{:.4}, {:.4}, ...; n={}]",
                self.shape,
                self.data[0],
                self.data[1],
                self.len()
            )
        }
    }
}

// Serialized as plain shape + values; JSON round-trips f64 exactly through
// the shortest-representation writer.
impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            shape: &'a [usize],
            data: &'a [f64],
        }
        Repr {
            shape: &self.shape,
            data: &self.data,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            shape: Vec<usize>,
            data: Vec<f64>,
        }
        let r = Repr::deserialize(deserializer)?;
        Tensor::from_vec(r.shape, r.data).map_err(D::Error::custom)
    }
}

/// Row-wise softmax of a `[n, c]` tensor, computed through log-sum-exp.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor, NumError> {
    let [n, c] = two_dims(logits, "softmax_rows")?;
    let mut out = vec![0.0; n * c];
    let x = logits.data();
    for s in 0..n {
        let row = &x[s * c..(s + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for j in 0..c {
            out[s * c + j] = (row[j] - lse).exp();
        }
    }
    Tensor::from_vec(vec![n, c], out)
}

pub(crate) fn two_dims(t: &Tensor, op: &'static str) -> Result<[usize; 2], NumError> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(NumError::ShapeMismatch {
            op,
            detail: format!("expected rank-2 tensor, got shape {other:?}"),
        }),
    }
}

pub(crate) fn three_dims(t: &Tensor, op: &'static str) -> Result<[usize; 3], NumError> {
    match t.shape() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(NumError::ShapeMismatch {
            op,
            detail: format!("expected rank-3 tensor, got shape {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::from_vec(vec![2, 3], vec![0.0; 5]),
            Err(NumError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::from_vec(vec![2, 0], vec![]),
            Err(NumError::ZeroExtent(_))
        ));
    }

    #[test]
    fn data_mut_is_copy_on_write() {
        let a = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 9.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::from_vec(vec![2, 3], vec![0.0, 0.0, 0.0, 5.0, -3.0, 0.5]).unwrap();
        let p = softmax_rows(&t).unwrap();
        for s in 0..2 {
            let sum: f64 = p.data()[s * 3..(s + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn serde_roundtrip_is_bit_exact() {
        let t = Tensor::from_vec(vec![2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 12345.6789]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: Tensor = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }
}
