//! Counter-based seed derivation so every consumer of randomness gets an
//! independent, reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    TrainAttack = 3,
    TrainNoise = 4,
    EvalAttack = 5,
    Split = 6,
    Data = 7,
    Probe = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a purpose tag and two counters.
pub fn derive_seed(master: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(master: u64, purpose: Purpose, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose, a, b))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
