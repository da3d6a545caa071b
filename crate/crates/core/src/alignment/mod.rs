//! The alignment model: projectors, semantic description enhancement, the
//! deep metric network, multi-positive targets and the joint loss.

mod config;
mod graph;
pub mod ops;
mod params;
pub mod reference;

pub use config::{LossKind, ModelConfig, ScoreFn, MAX_TAU, METRIC_LEAK, MIN_TAU};
#[doc(hidden)]
pub use graph::total_loss_with_fault;
pub use graph::{total_loss, Batch, ForwardCache};
pub use ops::{
    augmented_similarity, batch_scores, build_targets, classify, direct_similarity, dmn_score, fuse,
    project_text, project_visual, sde_augment, BatchScores, Prediction,
};
pub use params::{Linear, ModelParams};
