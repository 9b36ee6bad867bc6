use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for one named consumer of randomness. Distinct streams
/// under the same seed are independent, so adding a consumer never shifts
/// the draws of another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const TEACHER: u64 = 3;
    pub const PRUNE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const WARMUP: u64 = 6;
    pub const RANDOM_BASELINE: u64 = 7;
    pub const AUGMENT: u64 = 8;
    pub const MEAN_SUBSAMPLE: u64 = 9;
    /// Per-task streams are offset from this base by the task index.
    pub const TASK_BASE: u64 = 1 << 32;
}
