//! Fixtures shared by the benchmarks.

use fgd_core::imgcore::{BinaryMask, Frame};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Random frame with values in [0, 1].
pub fn random_frame(w: usize, h: usize, seed: u64) -> Frame {
    let mut rng = SplitMix64::seed_from_u64(seed);
    Frame::new(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).expect("valid dims")
}

/// Random binary mask with the given density of set pixels.
pub fn random_mask(w: usize, h: usize, density: f64, seed: u64) -> BinaryMask {
    let mut rng = SplitMix64::seed_from_u64(seed);
    BinaryMask::new(w, h, (0..w * h).map(|_| rng.random::<f64>() < density).collect()).expect("valid dims")
}
