//! Portable random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (via `rand_chacha`),
//! seeded with `seed_from_u64` and split into independent streams with
//! `set_stream`. Continuous variates are produced by inverse transform and
//! Box-Muller using the pure-Rust `libm` functions, so traces are bit-for-bit
//! identical on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream identifiers used by the trace generator.
pub mod streams {
    pub const ARRIVALS: u64 = 1;
    pub const TOKENS: u64 = 2;
    pub const BUCKETS: u64 = 3;
    pub const PRIORITY: u64 = 4;
}

pub struct PortableRng {
    inner: ChaCha8Rng,
}

impl PortableRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        PortableRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        -libm::log(self.open01()) / rate
    }

    /// Standard normal via Box-Muller (one variate per pair of uniforms).
    pub fn std_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.open01();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    pub fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        libm::exp(mu + sigma * self.std_normal())
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.open01() < p
    }
}
