//! Portable deterministic randomness for task generation and fault
//! injection.
//!
//! Every instance gets its own ChaCha20 stream: the key is
//! SHA-256(seed as little-endian u64 || domain label) and the stream id is
//! the instance index. Bounded draws use rejection sampling on raw `u64`
//! output, so sequences do not depend on any distribution code outside this
//! module.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// First four bytes of SHA-256 of the seed, as eight hex digits.
    pub fn digest(self) -> String {
        let hash = Sha256::digest(self.0.to_le_bytes());
        hex::encode(&hash[..4])
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

pub struct StreamRng(ChaCha20Rng);

impl StreamRng {
    pub fn new(seed: RngSeed, domain: &str, stream: u64) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(seed.0.to_le_bytes());
        hasher.update(domain.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        StreamRng(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.below(span) as i64
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = StreamRng::new(RngSeed(7), "x", 3);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = StreamRng::new(RngSeed(7), "x", 3);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = StreamRng::new(RngSeed(7), "x", 4);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let d: Vec<u64> = {
            let mut r = StreamRng::new(RngSeed(7), "y", 3);
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn bounded_draws_stay_in_range() {
        let mut r = StreamRng::new(RngSeed(1), "t", 0);
        for _ in 0..1000 {
            let x = r.range(-3, 4);
            assert!((-3..=4).contains(&x));
            let u = r.unit();
            assert!((0.0..1.0).contains(&u));
        }
        let d = r.distinct(10, 10);
        let mut sorted = d.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seed_digest_is_eight_hex_digits() {
        let d = RngSeed(42).digest();
        assert_eq!(d.len(), 8);
        assert!(d.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(d, RngSeed(42).digest());
        assert_ne!(d, RngSeed(43).digest());
    }
}
