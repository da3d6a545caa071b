//! Dual visual-text alignment (DVTA) for zero-shot skeleton action
//! recognition over pre-extracted skeleton and text features.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkernel`]: dense `f64` matrices, the kernels the model needs and a
//!   small reverse-mode tape that differentiates them.
//! - [`dataio`]: the `DVTA` feature-file format, JSON class manifests,
//!   seen/unseen splits, batch sampling and a synthetic benchmark generator.
//! - [`alignment`]: the model itself: projectors, semantic description
//!   enhancement, the deep metric network, multi-positive targets and the
//!   joint KL loss.
//! - [`trainer`]: Adam with cosine annealing, checkpoints and gradient checks.
//! - [`zeroshot`]: unseen-class evaluation, ablation runs and figure exports.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod dataio;
pub mod error;
pub mod numkernel;
pub mod trainer;
pub mod zeroshot;

pub use alignment::{
    LossKind, ModelConfig, ModelParams, ScoreFn, Prediction, ForwardCache,
};
pub use dataio::{ClassBank, Dataset, FeatureBank, SeenBank, SyntheticSpec, UnseenBank};
pub use error::{Error, Result};
pub use numkernel::Matrix;
pub use trainer::{TrainConfig, TrainOutcome};
pub use zeroshot::{AblationPlan, EvalReport};
