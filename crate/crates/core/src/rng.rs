//! Seeded random streams.
//!
//! Every subsystem draws from its own ChaCha stream keyed by the run seed, so
//! adding draws in one place never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    BprSampler = 2,
    GenNegatives = 3,
    Split = 4,
    Synthetic = 5,
    Baseline = 6,
    Evaluation = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: Vec<u32> = (0..8).map(|_| 0).scan(stream(7, Stream::Init), |r, _| Some(r.gen())).collect();
        let b: Vec<u32> = (0..8).map(|_| 0).scan(stream(7, Stream::Init), |r, _| Some(r.gen())).collect();
        let c: Vec<u32> = (0..8).map(|_| 0).scan(stream(7, Stream::Split), |r, _| Some(r.gen())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
