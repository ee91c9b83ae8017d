//! Reproducible random streams.
//!
//! All sampling uses ChaCha8, a counter-based generator with 2^64 independent
//! streams per seed. Replication `k` of a run with seed `s` uses stream `k`,
//! so concurrent replications never share state and every trace is
//! reproducible across platforms.
//!
//! Draw budget: a chain cycle consumes one `f64` per step; an MDP cycle
//! consumes two per step (action, then next state).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CycleRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> CycleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
