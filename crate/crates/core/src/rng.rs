//! Splittable counter-based random streams.
//!
//! A [`StreamRng`] is a 64-bit key plus a counter. Output `i` of a stream is a
//! SplitMix64 finalizer applied to `key + i * GOLDEN`, so a stream can be
//! recreated from its key alone and never depends on how many draws any other
//! stream made. [`StreamRng::split`] derives child keys by hashing, which is
//! what makes a branching cloud a pure function of `(seed, replica, path)`:
//! pruning a subtree or visiting it in a different order does not change any
//! other lineage.
//!
//! Replica `k` of seed `s` is always `StreamRng::new(s, k)`, so results are
//! independent of the worker count and of the parallel schedule.

use rand::rand_core::impls::fill_bytes_via_next;
use rand::RngCore;
use rand_distr::{Distribution, Exp1, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator identified by a 64-bit key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    /// Stream `(seed, stream)`.
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::from_seed(seed).split(stream)
    }

    /// Root stream of a seed. Replica streams are obtained with [`split`](Self::split).
    pub fn from_seed(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6a09_e667_f3bc_c908),
            counter: 0,
        }
    }

    /// Independent child stream labelled by `tag`. Does not advance `self`.
    pub fn split(&self, tag: u64) -> Self {
        let k = mix64(self.key ^ mix64(tag.wrapping_add(0x3c6e_f372_fe94_f82b)));
        Self {
            key: mix64(k.wrapping_add(GOLDEN)),
            counter: 0,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Fresh stream with the given key, as returned by [`key`](Self::key).
    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Exponential with mean 1.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(self)
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_output() {
        let mut a = StreamRng::new(7, 3);
        let mut b = StreamRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_does_not_advance_parent() {
        let a = StreamRng::new(1, 0);
        let mut c1 = a.split(5);
        let mut a2 = a.clone();
        let _ = a2.next_u64();
        let mut c2 = a.split(5);
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_ne!(a.split(5).key(), a.split(6).key());
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = StreamRng::new(1, 0);
        let mut b = StreamRng::new(1, 1);
        let mut c = StreamRng::new(2, 0);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_ne!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn uniform_moments() {
        let mut r = StreamRng::new(11, 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 1e-3);
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamRng::new(12, 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s += z;
            s2 += z * z;
        }
        assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
        assert!((s2 / n as f64 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
