use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Seedable, splittable random stream (xoshiro256++ seeded through splitmix64).
///
/// Every stochastic routine in the crate takes one of these explicitly. Floating
/// point transforms use `libm` so the streams agree bit-for-bit across platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream derived from `(seed, key)` without touching any existing state.
    pub fn keyed(seed: u64, key: u64) -> Self {
        Self::new(splitmix64(seed) ^ splitmix64(key.wrapping_add(0x6A09_E667_F3BC_C909)))
    }

    /// `k` child streams, seeded from the next `k` outputs of this one.
    pub fn split(&mut self, k: usize) -> Vec<RngState> {
        (0..k).map(|_| RngState::new(self.next_u64())).collect()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform integer in `0..n` (Lemire multiply-shift, `n > 0`).
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }

    /// Standard normals by Box–Muller. Each pair of uniforms yields two values;
    /// for odd `n` the last sine value is discarded so a call always consumes
    /// `2 * ceil(n / 2)` uniforms.
    pub fn normal(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.normal_pair();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    pub fn normal_pair(&mut self) -> (f64, f64) {
        // 1 - U lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * libm::log(u1)).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }

    /// Dropout mask: each entry is 0 with probability `p_drop`, else 1.
    pub fn bernoulli_mask(&mut self, n: usize, p_drop: f64) -> Result<Vec<f64>> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::invalid(format!(
                "drop probability {p_drop} outside [0, 1)"
            )));
        }
        Ok(self.bernoulli_mask_unchecked(n, p_drop))
    }

    pub(crate) fn bernoulli_mask_unchecked(&mut self, n: usize, p_drop: f64) -> Vec<f64> {
        (0..n)
            .map(|_| if self.next_f64() < p_drop { 0.0 } else { 1.0 })
            .collect()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn var(v: &[f64]) -> f64 {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn uniform_is_reproducible() {
        let a = RngState::new(42).uniform(3);
        let b = RngState::new(42).uniform(3);
        assert_eq!(a, b);
        assert!(a.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn uniform_mean() {
        let m = mean(&RngState::new(1).uniform(100_000));
        assert!((0.49..=0.51).contains(&m), "{m}");
    }

    #[test]
    fn split_streams_differ() {
        let mut parent = RngState::new(42);
        let mut kids = parent.split(2);
        let a = kids[0].uniform(8);
        let b = kids[1].uniform(8);
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
        let mut again = RngState::new(42).split(2);
        assert_eq!(again[0].uniform(8), a);
    }

    #[test]
    fn normal_moments() {
        let z = RngState::new(9).normal(100_000);
        let m = mean(&z);
        let v = var(&z);
        assert!(m.abs() <= 0.02, "{m}");
        assert!((0.97..=1.03).contains(&v), "{v}");
    }

    #[test]
    fn normal_deterministic_and_odd_lengths() {
        assert_eq!(RngState::new(4).normal(5), RngState::new(4).normal(5));
        let mut a = RngState::new(4);
        a.normal(3);
        let mut b = RngState::new(4);
        b.uniform(4);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn split_normals_uncorrelated() {
        let mut kids = RngState::new(77).split(2);
        let a = kids[0].normal(100_000);
        let b = kids[1].normal(100_000);
        let (ma, mb) = (mean(&a), mean(&b));
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / a.len() as f64;
        let corr = cov / (var(&a) * var(&b)).sqrt();
        assert!(corr.abs() < 0.02, "{corr}");
    }

    #[test]
    fn mask_edge_cases() {
        let mut rng = RngState::new(0);
        assert!(rng
            .bernoulli_mask(100, 0.0)
            .unwrap()
            .iter()
            .all(|&m| m == 1.0));
        assert!(rng.bernoulli_mask(3, 1.0).is_err());
        assert!(rng.bernoulli_mask(3, -0.1).is_err());
    }

    #[test]
    fn mask_rate() {
        let m = RngState::new(2).bernoulli_mask(100_000, 0.2).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((0.195..=0.205).contains(&zeros), "{zeros}");
        assert_eq!(m, RngState::new(2).bernoulli_mask(100_000, 0.2).unwrap());
    }

    #[test]
    fn keyed_streams_are_stable_and_distinct() {
        let mut a = RngState::keyed(5, 1);
        let mut b = RngState::keyed(5, 1);
        let mut c = RngState::keyed(5, 2);
        let x = a.next_u64();
        assert_eq!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngState::new(8).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
