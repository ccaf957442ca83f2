//! Deterministic RNG, prime tables, and float text formatting shared across
//! the crate.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Seeded pseudo-random generator with a fixed algorithm (ChaCha8), so every
/// consumer of a seed reproduces the same stream on any platform.
pub struct Prng(ChaCha8Rng);

impl Prng {
    pub fn seeded(seed: u64) -> Self {
        Prng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of entropy.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

/// First `k` primes in increasing order.
pub fn first_primes(k: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(k);
    let mut cand = 2u64;
    while primes.len() < k {
        if primes.iter().take_while(|&&p| p * p <= cand).all(|&p| cand % p != 0) {
            primes.push(cand);
        }
        cand += 1;
    }
    primes
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Format a float with 17 significant digits, enough for a lossless
/// `f64` round trip through text.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
