//! Seedable, platform-independent randomness.
//!
//! Everything stochastic in the crate draws from [`Rng`], a thin wrapper
//! around ChaCha8 with named sub-streams derived from one master seed and a
//! per-index stream for data generation. Value mapping (uniforms, Gaussians,
//! integer ranges) is implemented here on top of the raw 64-bit output so
//! generated datasets and initialized weights are reproducible across
//! machines.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Child seed for a named sub-stream; what `Rng::substream` seeds with.
/// Exposed so stages that need a plain seed (not a stream) derive theirs
/// the same way.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a(label.as_bytes())
}

/// Deterministic random stream.
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha8Rng::from_seed(expand_seed(seed)))
    }

    /// Independent stream named by a label, e.g. `"init"` or `"augment"`.
    pub fn substream(seed: u64, label: &str) -> Self {
        Self::from_seed(derive_seed(seed, label))
    }

    /// Independent stream per item index within a named sub-stream.
    pub fn for_index(seed: u64, label: &str, index: u64) -> Self {
        let mut rng = Self::substream(seed, label);
        rng.0.set_stream(index);
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]`, inclusive, without modulo bias.
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty integer range {lo}..={hi}");
        let span = (hi as i128 - lo as i128 + 1) as u128;
        if span > u64::MAX as u128 {
            return self.next_u64() as i64;
        }
        let span = span as u64;
        let rem = ((u64::MAX % span) + 1) % span;
        let zone = u64::MAX - rem;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (lo as i128 + (v % span) as i128) as i64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_int(0, i as i64) as usize;
            items.swap(i, j);
        }
    }
}

fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}
