//! Named random streams derived from one run seed.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream, so
//! adding draws in one place (e.g. buffer sampling) never shifts another
//! (e.g. environment resets).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Env,
    Init,
    Shuffle,
    Buffer,
    Action,
    Eval,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Env => 1,
            Stream::Init => 2,
            Stream::Shuffle => 3,
            Stream::Buffer => 4,
            Stream::Action => 5,
            Stream::Eval => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Independent generator for the `index`-th item of a seeded collection
/// (fuzz instances, seed fan-out).
pub fn indexed(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | index);
    rng
}
