//! Counter-based normal draws keyed by `(seed, path, slot)`.
//!
//! Each path owns one ChaCha8 stream; normal slot `i` consumes the 32-bit
//! words `[4i, 4i + 4)` of that stream, so any draw can be regenerated
//! without replaying the others.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct PathRng {
    rng: ChaCha8Rng,
    next_slot: u64,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        rng.set_word_pos(0);
        Self { rng, next_slot: 0 }
    }

    fn seek(&mut self, slot: u64) {
        if slot != self.next_slot {
            self.rng.set_word_pos(4 * slot as u128);
        }
        self.next_slot = slot + 1;
    }

    /// Two uniforms in `(0, 1]` and `[0, 1)` from slot `slot`.
    pub fn uniforms(&mut self, slot: u64) -> (f64, f64) {
        self.seek(slot);
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale;
        (u1, u2)
    }

    /// Standard normal from slot `slot` (Box-Muller, cosine branch).
    pub fn normal(&mut self, slot: u64) -> f64 {
        let (u1, u2) = self.uniforms(slot);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Slot of the increment for time step `step` and coordinate `coord`.
pub fn step_slot(step: usize, coord: usize, dim: usize) -> u64 {
    ((step + 1) * dim + coord) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let mut seq = PathRng::new(7, 3);
        let draws: Vec<f64> = (0..20).map(|s| seq.normal(s)).collect();
        let mut jump = PathRng::new(7, 3);
        assert_eq!(jump.normal(13), draws[13]);
        assert_eq!(jump.normal(2), draws[2]);
        assert_ne!(PathRng::new(7, 4).normal(0), draws[0]);
        assert_ne!(PathRng::new(8, 3).normal(0), draws[0]);
    }

    #[test]
    fn moments() {
        let mut r = PathRng::new(1, 0);
        let n = 200_000;
        let z: Vec<f64> = (0..n).map(|s| r.normal(s)).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
