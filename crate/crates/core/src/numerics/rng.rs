//! Seeded pseudo-random source.
//!
//! Generator: xoshiro256** (Blackman & Vigna) with its 256-bit state
//! initialized from the 64-bit seed through four SplitMix64 outputs.
//! Uniform `f64` values use the top 53 bits of a draw (`(x >> 11) · 2⁻⁵³`).
//! Normals use the Box–Muller transform on two uniforms, returning the cosine
//! branch first and caching the sine branch for the next call. The cached
//! value is part of the persisted state.

use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SeededRng {
    seed: u64,
    state: [u64; 4],
    spare_normal: Option<f64>,
}

/// Serializable snapshot of a [`SeededRng`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RngState {
    pub seed: u64,
    pub state: [u64; 4],
    pub spare_normal: Option<f64>,
}

pub fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            seed,
            state,
            spare_normal: None,
        }
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
        Self::new(splitmix64(&mut sm))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| T::of(self.normal())).collect()
    }

    /// `k` distinct indices from `0..n` (partial Fisher–Yates), in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn snapshot(&self) -> RngState {
        RngState {
            seed: self.seed,
            state: self.state,
            spare_normal: self.spare_normal,
        }
    }

    pub fn restore(s: RngState) -> Self {
        Self {
            seed: s.seed,
            state: s.state,
            spare_normal: s.spare_normal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn different_seeds_differ_early() {
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let xa: Vec<f64> = (0..16).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.normal()).collect();
        assert!(xa.iter().zip(&xb).all(|(x, y)| x != y));
    }

    #[test]
    fn reference_stream_is_pinned() {
        // SplitMix64(0) seeding followed by xoshiro256**; frozen so any change to
        // the generator shows up here rather than as silent checkpoint drift.
        let mut sm = 0u64;
        assert_eq!(splitmix64(&mut sm), 0xE220_A839_7B1D_CDAF);
        let mut r = SeededRng::new(0);
        let first = r.next_u64();
        let mut r2 = SeededRng::restore(SeededRng::new(0).snapshot());
        assert_eq!(first, r2.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut r = SeededRng::new(7);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn choose_distinct_has_no_repeats() {
        let mut r = SeededRng::new(9);
        for _ in 0..50 {
            let mut v = r.choose_distinct(24, 5);
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 5);
            assert!(v.iter().all(|&i| i < 24));
        }
    }

    #[test]
    fn snapshot_restore_continues_stream() {
        let mut a = SeededRng::new(5);
        a.normal();
        let mut b = SeededRng::restore(a.snapshot());
        for _ in 0..10 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }
}
