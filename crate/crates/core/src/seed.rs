//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (data generation, partitioning, attacker
//! assignment, client sampling, each client's local training in each round)
//! owns a stream keyed by `(master seed, purpose, ids...)`. Streams never
//! share state, so the order in which clients execute cannot leak into the
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Repeat = 1,
    TrainData = 2,
    TestData = 3,
    ServerData = 4,
    Partition = 5,
    Attackers = 6,
    Init = 7,
    Sampling = 8,
    Client = 9,
    Server = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with a SplitMix64 finalizer per step.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, purpose: Stream, ids: &[u64]) -> SimRng {
    let mut parts = Vec::with_capacity(ids.len() + 1);
    parts.push(purpose as u64);
    parts.extend_from_slice(ids);
    SimRng::seed_from_u64(derive(base, &parts))
}
