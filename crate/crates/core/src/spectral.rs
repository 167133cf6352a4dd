//! Frequency-domain analysis and feature-level brain augmentation.
//!
//! The pipeline treats a latent feature vector as a 1-D signal: transform it
//! with the DFT, describe the amplitude spectrum by its per-sample mean and
//! standard deviation, resample those two statistics at batch level, rescale
//! the amplitudes to the resampled statistics while keeping the phase
//! untouched, and invert the transform. Subject-level spectral signatures and
//! gap metrics quantify how far apart two subjects' feature spectra sit.
//!
//! Transforms are backed by rustfft; the direct `O(K^2)` evaluation of the
//! transform formulas exists only in test code as an independent oracle.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Epsilon guarding the amplitude normalization denominator.
pub const AMP_EPSILON: f64 = 1e-6;

/// Maximum tolerated imaginary residual when inverting a spectrum that is
/// expected to reconstruct a real signal.
pub const IDFT_RESIDUAL_LIMIT: f64 = 1e-6;

/// Tighter realness bound asserted on every augmentation output; the
/// amplitude rescaling preserves conjugate symmetry, so anything above this
/// indicates a broken spectrum.
pub const FBA_RESIDUAL_LIMIT: f64 = 1e-9;

/// A complex vector split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::invalid(format!(
                "complex vector: re/im length mismatch {} vs {}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexVector { re, im })
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Amplitude and phase of a spectrum, index-aligned with the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

/// Per-sample amplitude statistics (population convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeStats {
    pub mu: f64,
    pub sigma: f64,
}

/// Batch-level spread of the per-sample statistics (population convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchAmplitudeStats {
    pub sigma_mu: f64,
    pub sigma_sigma: f64,
}

/// How the per-sample amplitude statistics are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbaVariant {
    /// Resample `(mu, sigma)` from Gaussians centred on the sample's own
    /// statistics with batch-level spread.
    Gaussian,
    /// Add elementwise Gaussian noise (spread `sigma_mu`) to the amplitudes.
    RandomNoise,
    /// Resample `(mu, sigma)` uniformly with variance matched to the Gaussian
    /// variant (half-width `sqrt(3)` times the batch spread).
    Uniform,
    /// Use another batch sample's `(mu, sigma)`.
    Swap,
    /// Interpolate between own and another sample's `(mu, sigma)` with a
    /// uniform mixing coefficient.
    Mix,
}

/// Sampled augmentation constants, fixed before the transform is applied.
///
/// Holding the draw separately from the transform keeps the map
/// `x -> fba_apply(x, draw)` a deterministic function, which is what both the
/// gradient engine and finite-difference checks differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum FbaDraw {
    /// Per-row target statistics: `A~ = sigma_hat * (A - mu)/(sigma + eps) + mu_hat`.
    Affine {
        mu_hat: Vec<f64>,
        sigma_hat: Vec<f64>,
    },
    /// Per-row additive amplitude noise: `A~ = A + noise`.
    Additive { noise: Vec<Vec<f64>> },
}

impl FbaDraw {
    fn rows(&self) -> usize {
        match self {
            FbaDraw::Affine { mu_hat, .. } => mu_hat.len(),
            FbaDraw::Additive { noise } => noise.len(),
        }
    }
}

/// Intermediates cached by [`fba_apply`] for the gradient engine.
#[derive(Debug, Clone)]
pub struct FbaCache {
    pub rows: Vec<FbaRowCache>,
}

/// Per-row forward intermediates. `identity` rows skip the transform exactly
/// and carry no spectrum.
#[derive(Debug, Clone)]
pub struct FbaRowCache {
    pub identity: bool,
    pub xre: Vec<f64>,
    pub xim: Vec<f64>,
    pub amp: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn run_fft(re: &[f64], im: &[f64], forward: bool) -> (Vec<f64>, Vec<f64>) {
    let mut buf: Vec<Complex<f64>> = re
        .iter()
        .zip(im)
        .map(|(&r, &i)| Complex::new(r, i))
        .collect();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft = if forward {
            planner.plan_fft_forward(buf.len())
        } else {
            planner.plan_fft_inverse(buf.len())
        };
        fft.process(&mut buf);
    });
    (buf.iter().map(|c| c.re).collect(), buf.iter().map(|c| c.im).collect())
}

/// Unnormalized forward transform of a complex vector; used by the gradient
/// engine, which needs the raw kernel sums in both directions.
pub(crate) fn fft_forward_raw(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    run_fft(re, im, true)
}

/// Unnormalized inverse-kernel transform (`sum X_n e^{+j 2 pi n k / K}`).
pub(crate) fn fft_inverse_raw(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    run_fft(re, im, false)
}

/// Discrete Fourier transform of a real signal:
/// `X[k] = sum_n x[n] e^{-j 2 pi n k / K}`.
pub fn dft(x: &[f64]) -> Result<ComplexVector> {
    if x.is_empty() {
        return Err(Error::invalid("dft: empty signal"));
    }
    let zeros = vec![0.0; x.len()];
    let (re, im) = fft_forward_raw(x, &zeros);
    ComplexVector::new(re, im)
}

/// Inverse transform returning the real part together with the maximum
/// absolute imaginary residual, without gating on the residual.
pub fn idft_with_residual(spectrum: &ComplexVector) -> Result<(Vec<f64>, f64)> {
    let k = spectrum.len();
    if k == 0 {
        return Err(Error::invalid("idft: empty spectrum"));
    }
    let (re, im) = fft_inverse_raw(&spectrum.re, &spectrum.im);
    let scale = 1.0 / k as f64;
    let real: Vec<f64> = re.iter().map(|v| v * scale).collect();
    let residual = im
        .iter()
        .map(|v| (v * scale).abs())
        .fold(0.0f64, f64::max);
    Ok((real, residual))
}

/// Inverse transform `x[n] = (1/K) sum_k X[k] e^{+j 2 pi n k / K}`; errors
/// when the reconstruction is not real to within [`IDFT_RESIDUAL_LIMIT`].
pub fn idft(spectrum: &ComplexVector) -> Result<Vec<f64>> {
    let (real, residual) = idft_with_residual(spectrum)?;
    if residual > IDFT_RESIDUAL_LIMIT {
        return Err(Error::NonRealReconstruction {
            residual,
            limit: IDFT_RESIDUAL_LIMIT,
        });
    }
    Ok(real)
}

/// Splits a spectrum into amplitude `sqrt(re^2 + im^2)` and phase
/// `atan2(im, re)`, with phase defined as 0 where both parts are zero.
pub fn amp_phase(spectrum: &ComplexVector) -> Spectrum {
    let mut amplitude = Vec::with_capacity(spectrum.len());
    let mut phase = Vec::with_capacity(spectrum.len());
    for (&re, &im) in spectrum.re.iter().zip(&spectrum.im) {
        amplitude.push((re * re + im * im).sqrt());
        phase.push(if re == 0.0 && im == 0.0 {
            0.0
        } else {
            im.atan2(re)
        });
    }
    Spectrum { amplitude, phase }
}

/// Mean and population standard deviation of an amplitude vector.
pub fn amplitude_stats(amplitude: &[f64]) -> Result<AmplitudeStats> {
    if amplitude.is_empty() {
        return Err(Error::invalid("amplitude_stats: empty amplitude vector"));
    }
    let k = amplitude.len() as f64;
    let mu = amplitude.iter().sum::<f64>() / k;
    let var = amplitude.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / k;
    Ok(AmplitudeStats {
        mu,
        sigma: var.sqrt(),
    })
}

/// Population spread of the per-sample statistics across a batch. A batch of
/// one sample has zero spread, which makes the augmentation an exact identity.
pub fn batch_amplitude_stats(stats: &[AmplitudeStats]) -> Result<BatchAmplitudeStats> {
    if stats.is_empty() {
        return Err(Error::invalid("batch_amplitude_stats: empty batch"));
    }
    // The mean of identical values can round away from them (`sum / b`),
    // turning a mathematically zero spread into ~1e-16 and defeating the
    // bitwise identity shortcut downstream; constant inputs short-circuit.
    let spread = |pick: fn(&AmplitudeStats) -> f64| -> f64 {
        let first = pick(&stats[0]);
        if stats.iter().all(|s| pick(s) == first) {
            return 0.0;
        }
        let b = stats.len() as f64;
        let mean = stats.iter().map(pick).sum::<f64>() / b;
        (stats.iter().map(|s| (pick(s) - mean).powi(2)).sum::<f64>() / b).sqrt()
    };
    Ok(BatchAmplitudeStats {
        sigma_mu: spread(|s| s.mu),
        sigma_sigma: spread(|s| s.sigma),
    })
}

fn per_row_stats(batch: &Tensor) -> Result<Vec<AmplitudeStats>> {
    let (rows, _) = batch.dims2()?;
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let spectrum = dft(batch.row(i))?;
        out.push(amplitude_stats(&amp_phase(&spectrum).amplitude)?);
    }
    Ok(out)
}

/// Samples the augmentation constants for a batch. Draw order is fixed (row
/// by row, mean before deviation) so a given `(seed, stream)` always produces
/// the same constants. Sampled deviations are clamped at zero.
pub fn sample_fba_draw(
    batch: &Tensor,
    rng: &mut SeededRng,
    variant: FbaVariant,
) -> Result<FbaDraw> {
    let (rows, cols) = batch.dims2()?;
    if rows == 0 || cols < 2 {
        return Err(Error::invalid(format!(
            "fba: batch must be at least 1x2, got {rows}x{cols}"
        )));
    }
    let stats = per_row_stats(batch)?;
    let spread = batch_amplitude_stats(&stats)?;
    match variant {
        FbaVariant::Gaussian => {
            let mut mu_hat = Vec::with_capacity(rows);
            let mut sigma_hat = Vec::with_capacity(rows);
            for s in &stats {
                mu_hat.push(rng.gaussian_sample(s.mu, spread.sigma_mu)?);
                sigma_hat.push(rng.gaussian_sample(s.sigma, spread.sigma_sigma)?.max(0.0));
            }
            Ok(FbaDraw::Affine { mu_hat, sigma_hat })
        }
        FbaVariant::Uniform => {
            // Half-width sqrt(3) * spread matches the Gaussian variant's
            // variance.
            let half_mu = 3f64.sqrt() * spread.sigma_mu;
            let half_sigma = 3f64.sqrt() * spread.sigma_sigma;
            let mut mu_hat = Vec::with_capacity(rows);
            let mut sigma_hat = Vec::with_capacity(rows);
            for s in &stats {
                mu_hat.push(s.mu + (2.0 * rng.next_f64() - 1.0) * half_mu);
                sigma_hat.push((s.sigma + (2.0 * rng.next_f64() - 1.0) * half_sigma).max(0.0));
            }
            Ok(FbaDraw::Affine { mu_hat, sigma_hat })
        }
        FbaVariant::Swap | FbaVariant::Mix => {
            let mut mu_hat = Vec::with_capacity(rows);
            let mut sigma_hat = Vec::with_capacity(rows);
            for (i, s) in stats.iter().enumerate() {
                // A batch of one has no partner; fall back to own statistics.
                let j = if rows == 1 {
                    i
                } else {
                    let pick = rng.below((rows - 1) as u64) as usize;
                    if pick >= i {
                        pick + 1
                    } else {
                        pick
                    }
                };
                match variant {
                    FbaVariant::Swap => {
                        mu_hat.push(stats[j].mu);
                        sigma_hat.push(stats[j].sigma);
                    }
                    // Interpolating a sample with itself must stay bitwise on
                    // its own statistics; `l*mu + (1-l)*mu` rounds off them.
                    FbaVariant::Mix if j == i => {
                        mu_hat.push(s.mu);
                        sigma_hat.push(s.sigma);
                    }
                    FbaVariant::Mix => {
                        let lambda = rng.next_f64();
                        mu_hat.push(lambda * s.mu + (1.0 - lambda) * stats[j].mu);
                        sigma_hat.push((lambda * s.sigma + (1.0 - lambda) * stats[j].sigma).max(0.0));
                    }
                    _ => unreachable!(),
                }
            }
            Ok(FbaDraw::Affine { mu_hat, sigma_hat })
        }
        FbaVariant::RandomNoise => {
            // Real signals have conjugate-symmetric spectra, so the amplitude
            // noise must be mirror-symmetric across bins or the reconstruction
            // stops being real. Only the independent half is drawn.
            let half = cols / 2;
            let mut noise = Vec::with_capacity(rows);
            for _ in 0..rows {
                let mut row = vec![0.0; cols];
                for k in 0..=half {
                    row[k] = rng.gaussian_sample(0.0, spread.sigma_mu)?;
                }
                for k in half + 1..cols {
                    row[k] = row[cols - k];
                }
                noise.push(row);
            }
            Ok(FbaDraw::Additive { noise })
        }
    }
}

/// Applies a fixed augmentation draw to a batch.
///
/// Per row: transform, rescale the amplitude vector to the drawn statistics,
/// recombine with the original phase, invert. The recombination multiplies
/// each coefficient by `A~_k / A_k`, which is exactly `A~_k e^{j P_k}` while
/// avoiding trigonometry; a negative `A~_k` is absorbed as a phase flip.
/// Rows whose drawn statistics equal their own statistics bitwise (a batch of
/// one, or identical rows) are passed through unchanged, so zero batch spread
/// is an exact identity rather than an epsilon-sized perturbation.
pub fn fba_apply(batch: &Tensor, draw: &FbaDraw) -> Result<(Tensor, FbaCache)> {
    let (rows, cols) = batch.dims2()?;
    if rows == 0 || cols < 2 {
        return Err(Error::invalid(format!(
            "fba: batch must be at least 1x2, got {rows}x{cols}"
        )));
    }
    if draw.rows() != rows {
        return Err(Error::invalid(format!(
            "fba: draw covers {} rows, batch has {rows}",
            draw.rows()
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    let mut caches = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = batch.row(i);
        let spectrum = dft(row)?;
        let amp: Vec<f64> = spectrum
            .re
            .iter()
            .zip(&spectrum.im)
            .map(|(&re, &im)| (re * re + im * im).sqrt())
            .collect();
        let stats = amplitude_stats(&amp)?;
        let perturbed: Option<Vec<f64>> = match draw {
            FbaDraw::Affine { mu_hat, sigma_hat } => {
                if mu_hat[i] == stats.mu && sigma_hat[i] == stats.sigma {
                    None
                } else {
                    let denom = stats.sigma + AMP_EPSILON;
                    Some(
                        amp.iter()
                            .map(|&a| sigma_hat[i] * (a - stats.mu) / denom + mu_hat[i])
                            .collect(),
                    )
                }
            }
            FbaDraw::Additive { noise } => {
                if noise[i].len() != cols {
                    return Err(Error::invalid("fba: noise row length mismatch"));
                }
                if noise[i].iter().all(|&n| n == 0.0) {
                    None
                } else {
                    Some(amp.iter().zip(&noise[i]).map(|(&a, &n)| a + n).collect())
                }
            }
        };
        let Some(target) = perturbed else {
            out.extend_from_slice(row);
            caches.push(FbaRowCache {
                identity: true,
                xre: Vec::new(),
                xim: Vec::new(),
                amp: Vec::new(),
                mu: stats.mu,
                sigma: stats.sigma,
            });
            continue;
        };
        let mut pre = Vec::with_capacity(cols);
        let mut pim = Vec::with_capacity(cols);
        for k in 0..cols {
            if amp[k] == 0.0 {
                // Zero amplitude carries the zero-phase convention.
                pre.push(target[k]);
                pim.push(0.0);
            } else {
                let ratio = target[k] / amp[k];
                pre.push(ratio * spectrum.re[k]);
                pim.push(ratio * spectrum.im[k]);
            }
        }
        let (real, residual) = idft_with_residual(&ComplexVector::new(pre, pim)?)?;
        if residual > FBA_RESIDUAL_LIMIT {
            return Err(Error::NonRealReconstruction {
                residual,
                limit: FBA_RESIDUAL_LIMIT,
            });
        }
        out.extend_from_slice(&real);
        caches.push(FbaRowCache {
            identity: false,
            xre: spectrum.re,
            xim: spectrum.im,
            amp,
            mu: stats.mu,
            sigma: stats.sigma,
        });
    }
    Ok((
        Tensor::new(vec![rows, cols], out)?,
        FbaCache { rows: caches },
    ))
}

/// Samples a draw and applies it in one call.
pub fn fba_perturb(batch: &Tensor, rng: &mut SeededRng, variant: FbaVariant) -> Result<Tensor> {
    let draw = sample_fba_draw(batch, rng, variant)?;
    Ok(fba_apply(batch, &draw)?.0)
}

/// A subject's spectral fingerprint over a batch of feature vectors: the mean
/// complex spectrum, the mean amplitude spectrum, and the circular mean phase
/// (angle of the mean unit phasor, respecting the phase's periodicity).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSignature {
    pub mean_spectrum: ComplexVector,
    pub mean_amplitude: Vec<f64>,
    pub circular_phase: Vec<f64>,
}

pub fn subject_signature(batch: &Tensor) -> Result<SubjectSignature> {
    let (rows, cols) = batch.dims2()?;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("subject_signature: empty batch"));
    }
    let mut sum_re = vec![0.0; cols];
    let mut sum_im = vec![0.0; cols];
    let mut sum_amp = vec![0.0; cols];
    let mut sum_cos = vec![0.0; cols];
    let mut sum_sin = vec![0.0; cols];
    for i in 0..rows {
        let spectrum = dft(batch.row(i))?;
        let split = amp_phase(&spectrum);
        for k in 0..cols {
            sum_re[k] += spectrum.re[k];
            sum_im[k] += spectrum.im[k];
            sum_amp[k] += split.amplitude[k];
            sum_cos[k] += split.phase[k].cos();
            sum_sin[k] += split.phase[k].sin();
        }
    }
    let b = rows as f64;
    let circular_phase = sum_sin
        .iter()
        .zip(&sum_cos)
        .map(|(&s, &c)| {
            let (s, c) = (s / b, c / b);
            if s == 0.0 && c == 0.0 {
                0.0
            } else {
                s.atan2(c)
            }
        })
        .collect();
    Ok(SubjectSignature {
        mean_spectrum: ComplexVector::new(
            sum_re.iter().map(|v| v / b).collect(),
            sum_im.iter().map(|v| v / b).collect(),
        )?,
        mean_amplitude: sum_amp.iter().map(|v| v / b).collect(),
        circular_phase,
    })
}

/// Gap metrics between two subject signatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralGaps {
    pub d_freq: f64,
    pub d_amp: f64,
    pub d_pha: f64,
}

/// Wraps an angle difference into `(-pi, pi]` via the unit phasor.
fn wrap_angle(delta: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        delta.sin().atan2(delta.cos())
    }
}

pub fn spectral_gaps(p: &SubjectSignature, q: &SubjectSignature) -> Result<SpectralGaps> {
    let k = p.mean_spectrum.len();
    if q.mean_spectrum.len() != k {
        return Err(Error::invalid(format!(
            "spectral_gaps: signature lengths differ ({k} vs {})",
            q.mean_spectrum.len()
        )));
    }
    let mut freq = 0.0;
    let mut amp = 0.0;
    let mut pha = 0.0;
    for i in 0..k {
        let dre = p.mean_spectrum.re[i] - q.mean_spectrum.re[i];
        let dim = p.mean_spectrum.im[i] - q.mean_spectrum.im[i];
        freq += dre * dre + dim * dim;
        let da = p.mean_amplitude[i] - q.mean_amplitude[i];
        amp += da * da;
        let dp = wrap_angle(p.circular_phase[i] - q.circular_phase[i]);
        pha += dp * dp;
    }
    Ok(SpectralGaps {
        d_freq: freq.sqrt(),
        d_amp: amp.sqrt(),
        d_pha: pha.sqrt(),
    })
}

/// Gaps for every unordered subject pair plus their average.
pub fn pairwise_gaps(
    signatures: &[(u32, SubjectSignature)],
) -> Result<(Vec<(u32, u32, SpectralGaps)>, SpectralGaps)> {
    if signatures.len() < 2 {
        return Err(Error::invalid(
            "pairwise_gaps: need at least two subject signatures",
        ));
    }
    let mut pairs = Vec::new();
    let mut sum = SpectralGaps {
        d_freq: 0.0,
        d_amp: 0.0,
        d_pha: 0.0,
    };
    for i in 0..signatures.len() {
        for j in (i + 1)..signatures.len() {
            let gaps = spectral_gaps(&signatures[i].1, &signatures[j].1)?;
            sum.d_freq += gaps.d_freq;
            sum.d_amp += gaps.d_amp;
            sum.d_pha += gaps.d_pha;
            pairs.push((signatures[i].0, signatures[j].0, gaps));
        }
    }
    let n = pairs.len() as f64;
    Ok((
        pairs,
        SpectralGaps {
            d_freq: sum.d_freq / n,
            d_amp: sum.d_amp / n,
            d_pha: sum.d_pha / n,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_id, StreamDomain};

    /// Direct O(K^2) evaluation of the forward formula; the oracle the fast
    /// transform must agree with.
    fn direct_dft(x: &[f64]) -> ComplexVector {
        let k = x.len();
        let mut re = vec![0.0; k];
        let mut im = vec![0.0; k];
        for (out_k, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            for (n, &v) in x.iter().enumerate() {
                let angle = -std::f64::consts::TAU * (n * out_k) as f64 / k as f64;
                *r += v * angle.cos();
                *i += v * angle.sin();
            }
        }
        ComplexVector { re, im }
    }

    fn test_rng(tag: u64) -> SeededRng {
        SeededRng::new(2024, stream_id(StreamDomain::Test, 1, tag))
    }

    #[test]
    fn dft_of_impulse_is_flat() {
        let spectrum = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for k in 0..4 {
            assert!((spectrum.re[k] - 1.0).abs() < 1e-12);
            assert!(spectrum.im[k].abs() < 1e-12);
        }
    }

    #[test]
    fn dft_of_constant_concentrates_at_zero_bin() {
        let spectrum = dft(&[2.5; 8]).unwrap();
        assert!((spectrum.re[0] - 20.0).abs() < 1e-9);
        for k in 1..8 {
            assert!(spectrum.re[k].abs() < 1e-9, "bin {k}");
            assert!(spectrum.im[k].abs() < 1e-9);
        }
    }

    #[test]
    fn fast_transform_matches_direct_formula() {
        for &k in &[2usize, 3, 4, 8, 16, 64] {
            let mut rng = test_rng(k as u64);
            let x: Vec<f64> = (0..k).map(|_| rng.standard_gaussian()).collect();
            let fast = dft(&x).unwrap();
            let slow = direct_dft(&x);
            for i in 0..k {
                assert!((fast.re[i] - slow.re[i]).abs() < 1e-9, "K={k} re[{i}]");
                assert!((fast.im[i] - slow.im[i]).abs() < 1e-9, "K={k} im[{i}]");
            }
        }
    }

    #[test]
    fn idft_round_trips_random_signals() {
        let mut rng = test_rng(99);
        for &k in &[2usize, 3, 5, 16, 64] {
            let x: Vec<f64> = (0..k).map(|_| rng.standard_gaussian()).collect();
            let back = idft(&dft(&x).unwrap()).unwrap();
            for i in 0..k {
                assert!((back[i] - x[i]).abs() < 1e-12, "K={k} sample {i}");
            }
        }
    }

    #[test]
    fn idft_of_zero_bin_only_spectrum_is_constant() {
        let spectrum = ComplexVector::new(vec![8.0, 0.0, 0.0, 0.0], vec![0.0; 4]).unwrap();
        let x = idft(&spectrum).unwrap();
        for v in x {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn idft_rejects_asymmetric_spectrum() {
        // A lone nonzero bin at k=1 has no conjugate partner, so the inverse
        // picks up an imaginary part of 0.25 and must refuse.
        let spectrum = ComplexVector::new(vec![0.0, 1.0, 0.0, 0.0], vec![0.0; 4]).unwrap();
        let (real, residual) = idft_with_residual(&spectrum).unwrap();
        let expected = [0.25, 0.0, -0.25, 0.0];
        for (a, e) in real.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!((residual - 0.25).abs() < 1e-12);
        assert!(matches!(
            idft(&spectrum),
            Err(Error::NonRealReconstruction { .. })
        ));
    }

    #[test]
    fn amp_phase_matches_hand_values() {
        let spectrum = ComplexVector::new(vec![3.0, 0.0, -2.0], vec![4.0, 0.0, 0.0]).unwrap();
        let split = amp_phase(&spectrum);
        assert!((split.amplitude[0] - 5.0).abs() < 1e-12);
        assert!((split.phase[0] - 4f64.atan2(3.0)).abs() < 1e-12);
        // Zero coefficient takes the zero-phase convention.
        assert_eq!(split.phase[1], 0.0);
        // Negative real axis sits at pi.
        assert!((split.phase[2] - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn amplitude_stats_use_population_convention() {
        let s = amplitude_stats(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 0.0));
        let s = amplitude_stats(&[0.0, 2.0]).unwrap();
        assert!((s.mu - 1.0).abs() < 1e-15 && (s.sigma - 1.0).abs() < 1e-15);
        let s = amplitude_stats(&[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((s.mu - 4.0).abs() < 1e-15);
        assert!((s.sigma - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batch_stats_follow_population_convention() {
        let single = batch_amplitude_stats(&[AmplitudeStats { mu: 3.0, sigma: 1.0 }]).unwrap();
        assert_eq!((single.sigma_mu, single.sigma_sigma), (0.0, 0.0));
        let pair = batch_amplitude_stats(&[
            AmplitudeStats { mu: 1.0, sigma: 0.0 },
            AmplitudeStats { mu: 3.0, sigma: 0.0 },
        ])
        .unwrap();
        assert!((pair.sigma_mu - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_batch_spread_is_exactly_zero_despite_mean_rounding() {
        // mean(3 x 0.1) = 0.10000000000000002, so the naive variance of a
        // constant batch would come out ~1e-17 instead of 0.
        let stats = vec![AmplitudeStats { mu: 0.1, sigma: 0.3 }; 3];
        let spread = batch_amplitude_stats(&stats).unwrap();
        assert_eq!((spread.sigma_mu, spread.sigma_sigma), (0.0, 0.0));
    }

    #[test]
    fn single_sample_batch_is_exact_identity() {
        let mut rng = test_rng(5);
        let row: Vec<f64> = (0..16).map(|_| rng.standard_gaussian()).collect();
        let batch = Tensor::new(vec![1, 16], row.clone()).unwrap();
        for variant in [
            FbaVariant::Gaussian,
            FbaVariant::Uniform,
            FbaVariant::RandomNoise,
            FbaVariant::Swap,
            FbaVariant::Mix,
        ] {
            let out = fba_perturb(&batch, &mut test_rng(6), variant).unwrap();
            assert_eq!(out.data(), row.as_slice(), "{variant:?}");
        }
    }

    #[test]
    fn identical_rows_are_exact_identity_for_batch_spread_variants() {
        let mut rng = test_rng(7);
        let row: Vec<f64> = (0..12).map(|_| rng.standard_gaussian()).collect();
        // Odd tile counts exercise the mean-rounding path in the spread.
        for rows in [3usize, 5, 7] {
            let mut data = Vec::new();
            for _ in 0..rows {
                data.extend_from_slice(&row);
            }
            let batch = Tensor::new(vec![rows, 12], data).unwrap();
            for variant in [FbaVariant::Gaussian, FbaVariant::Uniform, FbaVariant::RandomNoise] {
                let out = fba_perturb(&batch, &mut test_rng(8), variant).unwrap();
                assert_eq!(out.data(), batch.data(), "{variant:?} x{rows}");
            }
        }
    }

    #[test]
    fn gaussian_variant_perturbs_heterogeneous_batches() {
        let mut rng = test_rng(9);
        let batch = Tensor::new(
            vec![4, 16],
            (0..64).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let out = fba_perturb(&batch, &mut test_rng(10), FbaVariant::Gaussian).unwrap();
        let max_diff = out
            .data()
            .iter()
            .zip(batch.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "expected a real perturbation, got {max_diff}");
    }

    #[test]
    fn augmentation_preserves_phase_at_live_bins() {
        let mut rng = test_rng(11);
        let batch = Tensor::new(
            vec![4, 16],
            (0..64).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let mut draw_rng = test_rng(12);
        let draw = sample_fba_draw(&batch, &mut draw_rng, FbaVariant::Gaussian).unwrap();
        let (out, _) = fba_apply(&batch, &draw).unwrap();
        let FbaDraw::Affine { mu_hat, sigma_hat } = &draw else {
            unreachable!()
        };
        for i in 0..4 {
            let before = amp_phase(&dft(batch.row(i)).unwrap());
            let after = amp_phase(&dft(out.row(i)).unwrap());
            let stats = amplitude_stats(&before.amplitude).unwrap();
            for k in 0..16 {
                let target = sigma_hat[i] * (before.amplitude[k] - stats.mu)
                    / (stats.sigma + AMP_EPSILON)
                    + mu_hat[i];
                if target > 1e-9 {
                    let dp = wrap_angle(after.phase[k] - before.phase[k]);
                    assert!(dp.abs() < 1e-6, "row {i} bin {k}: phase moved by {dp}");
                }
            }
        }
    }

    #[test]
    fn swap_with_two_rows_exchanges_statistics() {
        let mut rng = test_rng(13);
        let batch = Tensor::new(
            vec![2, 16],
            (0..32).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let draw = sample_fba_draw(&batch, &mut test_rng(14), FbaVariant::Swap).unwrap();
        let FbaDraw::Affine { mu_hat, sigma_hat } = &draw else {
            unreachable!()
        };
        let stats = per_row_stats(&batch).unwrap();
        // With two rows the only possible partner is the other row.
        assert_eq!(mu_hat[0], stats[1].mu);
        assert_eq!(mu_hat[1], stats[0].mu);
        assert_eq!(sigma_hat[0], stats[1].sigma);
        assert_eq!(sigma_hat[1], stats[0].sigma);
    }

    #[test]
    fn signature_of_single_row_matches_its_spectrum() {
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let batch = Tensor::new(vec![1, 4], x.clone()).unwrap();
        let sig = subject_signature(&batch).unwrap();
        let spectrum = dft(&x).unwrap();
        let split = amp_phase(&spectrum);
        for k in 0..4 {
            assert!((sig.mean_spectrum.re[k] - spectrum.re[k]).abs() < 1e-12);
            assert!((sig.mean_amplitude[k] - split.amplitude[k]).abs() < 1e-12);
            assert!((sig.circular_phase[k] - split.phase[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_mean_of_opposite_angles_is_zero() {
        // Reversing a real signal in time conjugates its spectrum, so the two
        // rows carry phases +th and -th at every bin. The phasor mean then
        // lands on the real axis: angle 0 wherever cos(th) > 0.
        let x = vec![0.9, -0.3, 1.7, 0.2, -1.1, 0.6];
        let mut reversed = vec![x[0]];
        reversed.extend(x[1..].iter().rev());
        let batch = Tensor::from_rows(&[x.clone(), reversed]).unwrap();
        let sig = subject_signature(&batch).unwrap();
        let phases = amp_phase(&dft(&x).unwrap()).phase;
        for k in 0..x.len() {
            if phases[k].cos() > 0.1 {
                assert!(
                    sig.circular_phase[k].abs() < 1e-12,
                    "bin {k}: {}",
                    sig.circular_phase[k]
                );
            }
        }
    }

    #[test]
    fn circular_mean_near_pi_stays_near_pi() {
        // Angles pi - 0.1 and -pi + 0.1 straddle the wrap point; a naive
        // arithmetic mean would give 0, the circular mean stays at pi.
        let a = std::f64::consts::PI - 0.1;
        let b = -std::f64::consts::PI + 0.1;
        let mean = ((a.sin() + b.sin()) / 2.0).atan2((a.cos() + b.cos()) / 2.0);
        assert!((mean.abs() - std::f64::consts::PI).abs() < 1e-12, "mean {mean}");
    }

    #[test]
    fn gaps_are_zero_on_self_and_symmetric() {
        let mut rng = test_rng(15);
        let batch_a = Tensor::new(
            vec![3, 8],
            (0..24).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let batch_b = Tensor::new(
            vec![3, 8],
            (0..24).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let sig_a = subject_signature(&batch_a).unwrap();
        let sig_b = subject_signature(&batch_b).unwrap();
        let self_gaps = spectral_gaps(&sig_a, &sig_a).unwrap();
        assert_eq!(
            (self_gaps.d_freq, self_gaps.d_amp, self_gaps.d_pha),
            (0.0, 0.0, 0.0)
        );
        let ab = spectral_gaps(&sig_a, &sig_b).unwrap();
        let ba = spectral_gaps(&sig_b, &sig_a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn phase_gap_ignores_full_turns() {
        let base = SubjectSignature {
            mean_spectrum: ComplexVector::new(vec![1.0, 0.5], vec![0.0, 0.0]).unwrap(),
            mean_amplitude: vec![1.0, 0.5],
            circular_phase: vec![0.3, -1.2],
        };
        let shifted = SubjectSignature {
            circular_phase: base
                .circular_phase
                .iter()
                .map(|p| p + std::f64::consts::TAU)
                .collect(),
            ..base.clone()
        };
        let gaps = spectral_gaps(&base, &shifted).unwrap();
        assert!(gaps.d_pha < 1e-12, "d_pha {}", gaps.d_pha);
    }

    #[test]
    fn pairwise_report_averages_unordered_pairs() {
        let mut rng = test_rng(16);
        let mut sigs = Vec::new();
        for id in 0..3u32 {
            let batch = Tensor::new(
                vec![2, 8],
                (0..16).map(|_| rng.standard_gaussian()).collect(),
            )
            .unwrap();
            sigs.push((id, subject_signature(&batch).unwrap()));
        }
        let (pairs, avg) = pairwise_gaps(&sigs).unwrap();
        assert_eq!(pairs.len(), 3);
        let mean_amp = pairs.iter().map(|p| p.2.d_amp).sum::<f64>() / 3.0;
        assert!((avg.d_amp - mean_amp).abs() < 1e-15);
        // Identical signatures collapse to zero everywhere.
        let same = vec![(0u32, sigs[0].1.clone()), (1u32, sigs[0].1.clone())];
        let (_, zero) = pairwise_gaps(&same).unwrap();
        assert_eq!((zero.d_freq, zero.d_amp, zero.d_pha), (0.0, 0.0, 0.0));
    }
}
