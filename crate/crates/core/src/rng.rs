//! Seed derivation for independent, schedule-free random streams.
//!
//! Every stochastic draw in a run comes from a `ChaCha8Rng` keyed by the
//! master seed, a stream tag, and up to two indices (typically round and
//! client). Two draws that share no key share no state, so per-client work
//! can run in any order and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tag for a derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    ClientSelection = 2,
    Minibatch = 3,
    Quantization = 4,
    Transmission = 5,
    Fading = 6,
    Partition = 7,
    Synthetic = 8,
    Optimizer = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the master seed with a tag and two indices into a 64-bit stream seed.
pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream_rng(master: u64, stream: Stream, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, a, b))
}

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
