//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the run seed, so the photon train is identical between feedback ON and OFF
//! runs that share a seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream assignments within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Photons,
    Splitter,
    Detector(u8),
    EcSampling,
    Trials,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Photons => 1,
            Stream::Splitter => 2,
            Stream::Detector(i) => 16 + u64::from(i),
            Stream::EcSampling => 64,
            Stream::Trials => 96,
        }
    }
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
