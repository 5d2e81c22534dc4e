//! Seeded, independent random streams.

use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream tags. A stream is keyed by `(seed, tag, a, b)`.
pub mod tag {
    pub const TRAIN: u64 = 1;
    pub const EM_TX: u64 = 2;
    pub const EM_RX: u64 = 3;
    pub const EVAL_STATS: u64 = 4;
    pub const CHANNEL: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const PILOT: u64 = 7;
    pub const CONSTELLATION: u64 = 8;
    pub const BOOTSTRAP: u64 = 9;
    pub const OPT_INIT: u64 = 10;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut s = splitmix(seed);
    s = splitmix(s ^ tag.wrapping_mul(0xa076_1d64_78bd_642f));
    s = splitmix(s ^ a.wrapping_mul(0xe703_7ed1_a0b4_28db));
    splitmix(s ^ b.wrapping_mul(0x8ebc_6af0_9c88_c6e3))
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, a, b))
}

/// Standard circularly-symmetric complex Gaussian, `E|z|^2 = 1`.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> c64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cn_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<c64> {
    (0..n).map(|_| cn01(rng)).collect()
}
