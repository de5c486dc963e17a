//! Counter-addressed Gaussian streams.
//!
//! A draw is addressed by `(master seed, path, lane, slot)`. The master seed
//! keys a ChaCha8 generator, `(path, lane)` selects the 64-bit stream and the
//! slot selects a fixed 8-word block inside it. Blocks never overlap, so the
//! value at an address does not depend on which other addresses were drawn
//! or in which order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Lane reserved for the random coefficient process.
pub const KAPPA_LANE: u32 = u32::MAX;
/// Lane reserved for auxiliary per-path draws (test fixtures, brute-force oracles).
pub const AUX_LANE: u32 = u32::MAX - 1;

const WORDS_PER_BLOCK: u128 = 8;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Panics if `path` does not fit in 32 bits.
    pub fn new(seed: u64, path: u64, lane: u32) -> Self {
        assert!(path <= u32::MAX as u64, "path index exceeds 32 bits");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((path << 32) | lane as u64);
        rng.set_word_pos(0);
        Self { rng }
    }

    /// Position the stream at block `slot`.
    pub fn seek(&mut self, slot: u64) {
        self.rng.set_word_pos(slot as u128 * WORDS_PER_BLOCK);
    }

    /// Four independent standard normals from one block (Box-Muller).
    pub fn block(&mut self) -> [f64; 4] {
        let u1 = open_unit(self.rng.next_u64());
        let u2 = open_unit(self.rng.next_u64());
        let u3 = open_unit(self.rng.next_u64());
        let u4 = open_unit(self.rng.next_u64());
        let (a, b) = box_muller(u1, u2);
        let (c, d) = box_muller(u3, u4);
        [a, b, c, d]
    }

    /// Four independent uniforms on (0, 1) from one block.
    pub fn uniform_block(&mut self) -> [f64; 4] {
        [
            open_unit(self.rng.next_u64()),
            open_unit(self.rng.next_u64()),
            open_unit(self.rng.next_u64()),
            open_unit(self.rng.next_u64()),
        ]
    }
}

#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_sequential() {
        let mut seq = NormalStream::new(7, 3, 5);
        let blocks: Vec<_> = (0..10).map(|_| seq.block()).collect();
        let mut jump = NormalStream::new(7, 3, 5);
        jump.seek(6);
        assert_eq!(jump.block(), blocks[6]);
        jump.seek(2);
        assert_eq!(jump.block(), blocks[2]);
    }

    #[test]
    fn streams_are_distinct() {
        let a = NormalStream::new(1, 0, 0).block();
        let b = NormalStream::new(1, 0, 1).block();
        let c = NormalStream::new(1, 1, 0).block();
        let d = NormalStream::new(2, 0, 0).block();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn moments() {
        let mut s = NormalStream::new(11, 0, 0);
        let n = 50_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            for z in s.block() {
                sum += z;
                sq += z * z;
            }
        }
        let m = (4 * n) as f64;
        let mean = sum / m;
        let var = sq / m - mean * mean;
        assert!(mean.abs() < 4.0 / m.sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / m).sqrt());
    }
}
