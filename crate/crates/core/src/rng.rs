//! Seedable generator used for every random draw in the crate.
//!
//! Backed by xoshiro256** with SplitMix64 seed expansion, so a `u64` seed
//! produces the same stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct Prng {
    inner: Xoshiro256StarStar,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, index)`; used to give every
    /// instance of a batch its own generator regardless of thread layout.
    pub fn for_index(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self, mu: f64, sigma: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mu + sigma * z
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// Uniformly distributed direction on the unit sphere in `d` dimensions.
    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| self.normal(0.0, 1.0)).collect();
            let norm = crate::linalg::l2_norm(&v);
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::new(7);
        let mut b = Prng::new(7);
        for _ in 0..100 {
            assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
        }
    }

    #[test]
    fn uniform_range() {
        let mut r = Prng::new(3);
        for _ in 0..10_000 {
            let u = r.uniform(0.0, 1.0);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_mean_near_zero() {
        let mut r = Prng::new(1);
        let n = 100_000;
        let mean = (0..n).map(|_| r.normal(0.0, 1.0)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = Prng::new(2);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn unit_vector_has_unit_norm() {
        let mut r = Prng::new(4);
        let u = r.unit_vector(17);
        assert!((crate::linalg::l2_norm(&u) - 1.0).abs() < 1e-12);
    }
}
