//! Seeded random streams.
//!
//! Every stochastic component takes an explicit stream derived from a
//! master seed and a stream label, so independent parts of the pipeline
//! never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Mixes a master seed with a label into a new 64-bit seed (splitmix64 finaliser).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h)
}

pub fn derive_seed_n(master: u64, label: &str, index: u64) -> u64 {
    splitmix(derive_seed(master, label) ^ splitmix(index.wrapping_add(1)))
}

pub fn stream(master: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
