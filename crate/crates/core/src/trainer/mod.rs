//! Adam with cosine-annealed learning rate, the training loop, checkpoints
//! and gradient checking.

mod adam;
pub mod checkpoint;
mod config;
pub mod gradcheck;
mod train;

pub use adam::{adam_step, SamplerPosition, TrainState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{cosine_lr, TrainConfig};
pub use gradcheck::{gradcheck, GradcheckReport, GradcheckRow};
pub use train::{sampler_seed, train, train_with, LossRecord, TrainOutcome};
