//! Named, deterministic random substreams.
//!
//! One global seed expands into independent ChaCha streams keyed by a
//! stream name plus integer coordinates (iteration, attempt, company, ...).
//! Every draw in the pipeline comes from one of these, so serial and
//! parallel execution produce identical results and adding iterations
//! never perturbs earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Substream names used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Calibration,
    Qmc,
    Priors,
    Employees,
    Copula,
    Realization,
    Simulation,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Calibration => 0x6361_6c69,
            Stream::Qmc => 0x716d_6300,
            Stream::Priors => 0x7072_696f,
            Stream::Employees => 0x656d_706c,
            Stream::Copula => 0x636f_7075,
            Stream::Realization => 0x7265_616c,
            Stream::Simulation => 0x7369_6d75,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed, a stream name and coordinates into a 64-bit seed.
pub fn derive_seed(base: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream.tag()));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    h
}

pub fn substream(base: u64, stream: Stream, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, stream, coords))
}

/// Stable 64-bit key for a string identifier (FNV-1a).
pub fn key_of(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
