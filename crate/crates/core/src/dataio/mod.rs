//! Feature files, class manifests, splits, batching and synthetic benchmarks.

mod bank;
pub mod format;
pub mod manifest;
mod sampler;
pub mod synthetic;

pub use bank::{ClassBank, ClassId, ClassSet, Dataset, FeatureBank, SeenBank, UnseenBank};
pub use format::{load_feature_file, save_feature_file};
pub use manifest::{load_manifest, save_dataset, Manifest};
pub use sampler::BatchSampler;
pub use synthetic::{generate_synthetic, generate_synthetic_traced, SyntheticBenchmark, SyntheticSpec};
