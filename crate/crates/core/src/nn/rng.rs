//! Seeded random streams. Every random draw in the crate comes from a
//! ChaCha8 generator keyed by `(root seed, stream id)`, so any single stream
//! can be regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named stream families; the stream id packs the family tag and an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Generate,
    Rollout,
    Perturbation,
    ScenarioPick,
    Minibatch,
    Probe,
    Evaluate,
    Test,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Generate => 2,
            Stream::Rollout => 3,
            Stream::Perturbation => 4,
            Stream::ScenarioPick => 5,
            Stream::Minibatch => 6,
            Stream::Probe => 7,
            Stream::Evaluate => 8,
            Stream::Test => 9,
        }
    }

    pub fn id(self, index: u64) -> u64 {
        debug_assert!(index < 1 << 48);
        (self.tag() << 48) | index
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn named_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    stream_rng(seed, stream.id(index))
}

/// Derives a child seed, e.g. the rollout seed of iteration `index`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    named_rng(seed, stream, index).next_u64()
}

/// ε ~ N(0, I) of length `dim` from stream `stream` of `seed`.
pub fn sample_perturbation(seed: u64, stream: u64, dim: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}
