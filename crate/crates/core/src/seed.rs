//! Seed splitting.
//!
//! Every random stream in the crate is keyed by `derive(master, path)`, where
//! `path` names the work unit (game index, restart index, iteration, ...).
//! Each path element is folded into the state with one SplitMix64 finalizer
//! round, so a stream depends only on the master seed and its own path and
//! never on the order in which work units are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = mix(master.wrapping_add(GOLDEN));
    for &p in path {
        state = mix(state ^ mix(p.wrapping_add(GOLDEN)));
    }
    state
}

pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

/// Stream tags keep unrelated consumers of one master seed apart.
pub mod stream {
    pub const POPULATION_COUPLES: u64 = 1;
    pub const GAME: u64 = 2;
    pub const MISSING: u64 = 3;
    pub const EM_RESTART: u64 = 4;
    pub const HALF_SPLIT: u64 = 5;
    pub const TRAINING_SUBSET: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const CONTROL_PAIR: u64 = 8;
    pub const TRAJECTORY: u64 = 9;
}
