use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shuffled mini-batches over `len` rows. Every epoch is a fresh
/// permutation derived from `(seed, epoch)`; the final short batch is kept.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let mut s = Self { len, batch_size, seed, epoch: 0, order: Vec::new(), cursor: 0 };
        s.order = s.permutation(0);
        s
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut rng);
        order
    }

    /// All batches of one epoch, without advancing the sampler.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.permutation(epoch).chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Next batch of row indices, rolling into the next epoch when the
    /// current one is exhausted. Returns an empty batch for an empty bank.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        if self.cursor >= self.len {
            self.epoch += 1;
            self.order = self.permutation(self.epoch);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.len);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}
