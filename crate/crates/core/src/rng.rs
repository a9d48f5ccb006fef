//! Counter-based pseudo random numbers.
//!
//! The generator is Widynski's "Squares" construction: every output is a pure
//! function of a 64-bit key and a 64-bit counter, so the complete state is 16
//! bytes, streams can be split by deriving new keys, and results are
//! identical on every platform.

use libm::{cos, log, sqrt};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn squares64(ctr: u64, key: u64) -> u64 {
    let y = ctr.wrapping_mul(key);
    let z = y.wrapping_add(key);
    let mut x = y;
    x = x.wrapping_mul(x).wrapping_add(y).rotate_right(32);
    x = x.wrapping_mul(x).wrapping_add(z).rotate_right(32);
    x = x.wrapping_mul(x).wrapping_add(y).rotate_right(32);
    let t = x.wrapping_mul(x).wrapping_add(z);
    x = t.rotate_right(32);
    t ^ (x.wrapping_mul(x).wrapping_add(y) >> 32)
}

/// Keys need to be odd and have well mixed bits; splitmix output forced odd
/// is good enough for that.
fn derive_key(seed: u64) -> u64 {
    splitmix64(seed) | 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SquaresRng {
    key: u64,
    counter: u64,
}

impl SquaresRng {
    pub fn new(seed: u64) -> Self {
        Self { key: derive_key(seed), counter: 0 }
    }

    /// Rebuild a generator from a state previously returned by [`Self::state`].
    pub fn from_state(state: [u8; 16]) -> Self {
        let mut key = [0u8; 8];
        let mut ctr = [0u8; 8];
        key.copy_from_slice(&state[..8]);
        ctr.copy_from_slice(&state[8..]);
        Self { key: u64::from_le_bytes(key), counter: u64::from_le_bytes(ctr) }
    }

    /// Key then counter, both little-endian.
    pub fn state(&self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.key.to_le_bytes());
        out[8..].copy_from_slice(&self.counter.to_le_bytes());
        out
    }

    /// Independent stream identified by `stream`. Does not advance `self`.
    pub fn split(&self, stream: u64) -> Self {
        let key = derive_key(self.key ^ splitmix64(stream.wrapping_add(self.counter.rotate_left(17))));
        Self { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = squares64(self.counter, self.key);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, rejection sampled so there is no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal deviate (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        sqrt(-2.0 * log(u1)) * cos(core::f64::consts::TAU * u2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SquaresRng::new(7);
        let mut b = SquaresRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let mut a = SquaresRng::new(42);
        a.next_u64();
        let mut b = SquaresRng::from_state(a.state());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn splits_differ() {
        let root = SquaresRng::new(1);
        let mut s1 = root.split(1);
        let mut s2 = root.split(2);
        let v1: Vec<u64> = (0..8).map(|_| s1.next_u64()).collect();
        let v2: Vec<u64> = (0..8).map(|_| s2.next_u64()).collect();
        assert_ne!(v1, v2);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut r = SquaresRng::new(3);
        let n = 200_000;
        let (mut su, mut sn, mut sn2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            su += r.next_f64();
            let z = r.normal();
            sn += z;
            sn2 += z * z;
        }
        let n = n as f64;
        assert!((su / n - 0.5).abs() < 0.005);
        assert!((sn / n).abs() < 0.01);
        assert!((sn2 / n - 1.0).abs() < 0.02);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SquaresRng::new(5);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = r.below(7) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
