//! Turn-intent classification for a semi-active lower-limb prosthesis.
//!
//! The crate bundles everything needed to run the experiment end to end on
//! a desk machine:
//!
//! * [`tensor`] / [`tape`] / [`optim`] — a minimal dense f64 tensor type with
//!   reverse-mode differentiation and an Adam optimizer, sufficient to train
//!   every model family in this crate.
//! * [`basis`] — B-spline bases (Cox–de Boor), Jacobi polynomials, the
//!   fractional sigmoid transform and the static activations.
//! * [`models`] — MLP, KAN, 1-D CNN and FKAN classifiers plus the
//!   class-weighted full-batch trainer.
//! * [`data`] — trial/window data model, smoothing, 50 %-overlap windowing,
//!   trial-level splits, stratified test divisions, a synthetic multi-subject
//!   IMU gait generator and CSV ingestion.
//! * [`metrics`] — confusion matrices, macro-F1 and inverse-frequency class
//!   weights.
//! * [`hyperopt`] — Gaussian-process Bayesian optimization over the mixed
//!   discrete/continuous model search spaces.
//! * [`stats`] — exact one-tailed Wilcoxon signed-rank, one-tailed paired t,
//!   a JZS Bayes factor and the paired hypothesis harness.

pub mod basis;
pub mod data;
pub mod hyperopt;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod special;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use optim::{finite_diff_check, Adam, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::{NumError, Tensor};
