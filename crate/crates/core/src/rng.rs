//! Deterministic, splittable random number generation.
//!
//! Every stochastic call site in the crate owns a private stream keyed by
//! `(seed, stream_id)`. Streams are backed by ChaCha8, a counter-based cipher
//! whose output for a given key/stream pair is identical across runs and
//! platforms. Because streams never share state, toggling one mechanism on or
//! off cannot shift the draws seen by another; ablation rows with the same
//! seed stay draw-for-draw comparable.
//!
//! Uniform and Gaussian conversion is done locally (bit shift and Box-Muller)
//! instead of through distribution adapters so the exact value sequence is
//! part of this crate's contract.

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Domains partition the stream id space; one per stochastic call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Stimulus latent draws during world generation.
    WorldLatent = 1,
    /// The master voxel basis shared by all subjects.
    WorldBasis = 2,
    /// Per-subject jitter applied to the master basis.
    WorldJitter = 3,
    /// Per-sample voxel observation noise.
    WorldNoise = 4,
    /// Ridge mapper weight initialization.
    RidgeInit = 5,
    /// Brain encoder weight initialization.
    EncoderInit = 6,
    /// Frozen image encoder projection matrix.
    ImageEncoder = 7,
    /// Per-epoch mini-batch shuffling.
    Shuffle = 8,
    /// Feature-level brain augmentation draws.
    Fba = 9,
    /// Random-source selection for the RandomOne prior mode.
    RandomPrior = 10,
    /// Retrieval pool sampling.
    Retrieval = 11,
    /// Free-use domain for tests and oracles.
    Test = 15,
}

/// Packs a domain and two indices into a single stream id.
///
/// Layout: domain in the top byte, `a` in the next 24 bits, `b` in the low 32.
/// Callers keep `a < 2^24` and `b < 2^32`; epoch and step counters at desk
/// scale are far below both bounds.
pub fn stream_id(domain: StreamDomain, a: u64, b: u64) -> u64 {
    debug_assert!(a < (1 << 24) && b < (1 << 32));
    ((domain as u64) << 56) | ((a & 0xff_ffff) << 32) | (b & 0xffff_ffff)
}

/// A seeded random stream with cached Box-Muller state.
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_gaussian: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
            spare_gaussian: None,
        }
    }

    pub fn for_domain(seed: u64, domain: StreamDomain, a: u64, b: u64) -> Self {
        SeededRng::new(seed, stream_id(domain, a, b))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe as a logarithm argument.
    fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Standard normal draw. Box-Muller produces variates in pairs; the
    /// second of each pair is cached and returned by the following call, so
    /// both are consumed in order.
    pub fn standard_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = self.next_open_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_gaussian = Some(radius * theta.sin());
        radius * theta.cos()
    }

    /// Gaussian draw with the given mean and standard deviation.
    ///
    /// `std == 0` degenerates to `mean` exactly (the underlying uniforms are
    /// still consumed, keeping draw counts independent of parameter values).
    pub fn gaussian_sample(&mut self, mean: f64, std: f64) -> Result<f64> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian_sample: mean {mean}, std {std}"
            )));
        }
        Ok(mean + std * self.standard_gaussian())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            slice.swap(i, j);
        }
    }

    /// Samples `k` distinct indices from `0..n` (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::invalid(format!(
                "sample_indices: cannot draw {k} distinct indices from {n}"
            )));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_give_identical_sequences() {
        let mut a = SeededRng::new(42, 7);
        let mut b = SeededRng::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_diverge() {
        let mut a = SeededRng::new(42, 7);
        let mut b = SeededRng::new(42, 8);
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn zero_std_returns_mean_exactly() {
        let mut rng = SeededRng::new(1, 1);
        assert_eq!(rng.gaussian_sample(3.25, 0.0).unwrap(), 3.25);
    }

    #[test]
    fn negative_std_is_rejected() {
        let mut rng = SeededRng::new(1, 1);
        assert!(rng.gaussian_sample(0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_moments_match_standard_normal() {
        // Monte Carlo oracle: 1e5 draws from seed 7 land within loose
        // confidence bounds of mean 0 and variance 1.
        let mut rng = SeededRng::new(7, stream_id(StreamDomain::Test, 0, 0));
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.standard_gaussian()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn uniform_draws_stay_in_unit_interval() {
        let mut rng = SeededRng::new(9, 9);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sample_indices_are_distinct_and_in_range() {
        let mut rng = SeededRng::new(3, 3);
        let picks = rng.sample_indices(600, 300).unwrap();
        assert_eq!(picks.len(), 300);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 300);
        assert!(picks.iter().all(|&i| i < 600));
    }

    #[test]
    fn domain_packing_is_injective_over_used_ranges() {
        let a = stream_id(StreamDomain::Fba, 3, 12);
        let b = stream_id(StreamDomain::Fba, 12, 3);
        let c = stream_id(StreamDomain::Shuffle, 3, 12);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
