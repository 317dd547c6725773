//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, domain, stream)` and a
//! position inside the stream. Path noise uses one ChaCha8 stream per particle
//! and consumes a fixed number of words per time step, so the increment of
//! particle `i` at step `k` is a pure function of `(seed, i, k)`. That is what
//! makes simulations bitwise reproducible independently of the worker count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains keep unrelated uses of one seed apart.
pub mod domain {
    pub const PATH_NOISE: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const SUBSAMPLE: u64 = 0x03;
    pub const DIRECTIONS: u64 = 0x04;
    pub const CHECK_SAMPLES: u64 = 0x05;
    pub const INTERACTION_BATCH: u64 = 0x06;
    pub const QUADRATURE: u64 = 0x07;
    pub const HARNACK: u64 = 0x08;
    pub const LSI: u64 = 0x09;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, domain: u64) -> [u8; 32] {
    let mut state = seed ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln() is always finite.
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A seeded random stream with fixed-width draws.
#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, domain: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(derive_key(seed, domain));
        rng.set_stream(stream);
        Self { rng }
    }

    /// Jump to the given 64-bit word offset inside the stream.
    pub fn seek_u64(&mut self, offset: u64) {
        self.rng.set_word_pos(u128::from(offset) * 2);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        to_open_unit(self.rng.next_u64())
    }

    /// Uniform integer in `0..n` (n > 0), by rejection.
    pub fn index(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fills `out` with standard normals by Box-Muller.
    ///
    /// Consumes exactly `2 * ceil(out.len() / 2)` words.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_mut(2);
        for pair in &mut chunks {
            let u1 = to_open_unit(self.rng.next_u64());
            let u2 = to_open_unit(self.rng.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            pair[0] = r * c;
            if pair.len() > 1 {
                pair[1] = r * s;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let mut z = [0.0; 1];
        self.fill_normals(&mut z);
        z[0]
    }
}

/// Number of 64-bit words one noise vector of width `noise_dim` consumes.
pub fn words_per_draw(noise_dim: usize) -> u64 {
    (2 * noise_dim.div_ceil(2)) as u64
}

/// Per-particle Gaussian increment streams.
///
/// Stream `i` belongs to particle `i`; step `k` occupies words
/// `[k * w, (k + 1) * w)` with `w = words_per_draw(noise_dim)`.
#[derive(Clone, Debug)]
pub struct PathNoise {
    seed: u64,
    noise_dim: usize,
}

impl PathNoise {
    pub fn new(seed: u64, noise_dim: usize) -> Self {
        Self { seed, noise_dim }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Sequential stream for particle `index`, positioned at step 0.
    pub fn particle(&self, index: usize) -> Stream {
        Stream::new(self.seed, domain::PATH_NOISE, index as u64)
    }

    /// Random access: the standard-normal vector of particle `index` at `step`.
    pub fn at(&self, index: usize, step: u64) -> Vec<f64> {
        let mut s = self.particle(index);
        s.seek_u64(step * words_per_draw(self.noise_dim));
        let mut out = vec![0.0; self.noise_dim];
        s.fill_normals(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_matches_random_access() {
        let noise = PathNoise::new(11, 3);
        let mut s = noise.particle(5);
        let mut buf = vec![0.0; 3];
        for step in 0..20 {
            s.fill_normals(&mut buf);
            assert_eq!(buf, noise.at(5, step));
        }
    }

    #[test]
    fn streams_differ_by_particle_and_domain() {
        let a = PathNoise::new(1, 1).at(0, 0);
        let b = PathNoise::new(1, 1).at(1, 0);
        assert_ne!(a, b);
        let mut c = Stream::new(1, domain::INIT, 0);
        let mut d = Stream::new(1, domain::SUBSAMPLE, 0);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn normals_have_unit_variance() {
        let mut s = Stream::new(3, domain::INIT, 0);
        let mut v = vec![0.0; 200_000];
        s.fill_normals(&mut v);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn index_is_in_range() {
        let mut s = Stream::new(9, domain::SUBSAMPLE, 0);
        for _ in 0..1000 {
            assert!(s.index(7) < 7);
        }
    }
}
