//! Fixtures shared by the benchmarks.

use dvta::alignment::Batch;
use dvta::dataio::generate_synthetic;
use dvta::{Dataset, ModelConfig, ModelParams, SyntheticSpec};

pub struct Fixture {
    pub data: Dataset,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub batch: Batch,
}

/// Standard synthetic benchmark with a freshly initialised model and the
/// first `batch_size` seen samples as a batch.
pub fn fixture(config: ModelConfig, batch_size: usize) -> Fixture {
    let data = generate_synthetic(&SyntheticSpec::default()).expect("default spec is valid");
    let params = ModelParams::init(&config, 0);
    let seen = data.seen();
    let idx: Vec<usize> = (0..batch_size.min(seen.len())).collect();
    let (visual, labels) = seen.rows(&idx);
    Fixture { data, config, params, batch: Batch { visual, labels } }
}
