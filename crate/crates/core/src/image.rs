//! Difficulty-aware image blur.
//!
//! Auxiliary supervision targets are built by blending each training image
//! with a fully blurred copy of itself: a radial mask keeps a clear disc
//! around the image centre and fades into blur outside it. The disc radius
//! grows for samples the model currently finds hard (tracked by an EMA bank
//! of per-stimulus easiness) and shrinks for easy ones, and is seeded from a
//! saliency radius estimated from the image itself.
//!
//! All radii are fractions of `min(H, W)` so the same configuration scales
//! across image resolutions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with pixel values in `[0, 1]`, stored row-major as
/// `H x W x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image: zero dimension"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "image: {}x{} expects {} values, got {}",
                height,
                width,
                height * width * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image: pixel outside [0, 1]"));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let base = (u * self.width + v) * 3;
        [
            self.pixels[base],
            self.pixels[base + 1],
            self.pixels[base + 2],
        ]
    }

    /// Mean of the three channels.
    pub fn luminance(&self, u: usize, v: usize) -> f64 {
        let [r, g, b] = self.pixel(u, v);
        (r + g + b) / 3.0
    }
}

/// How auxiliary supervision images are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurStrategy {
    /// Pass the original image through.
    Clean,
    /// Use the fully blurred image.
    Whole,
    /// Radial mask with radius `(r_min + r_max) / 2`, ignoring both saliency
    /// and difficulty.
    FixedRadius,
    /// Full pipeline: saliency radius, EMA difficulty, clamped clear radius.
    DifficultyAware,
}

/// Blur pipeline settings. Radii are fractions of `min(H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurConfig {
    /// Odd kernel width; the documented full-scale default is 51, desk-scale
    /// configurations use 7 at 32-pixel images.
    pub kernel_size: usize,
    /// Kernel standard deviation in pixels; `kernel_size / 6` by convention.
    pub kernel_sigma: f64,
    /// Easiness temperature.
    pub temperature: f64,
    /// EMA momentum of the difficulty bank.
    pub momentum: f64,
    /// Saliency-to-radius scale.
    pub scale: f64,
    /// Hardness gain on the clear radius.
    pub beta_h: f64,
    /// Mask decay rate.
    pub lambda_alpha: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub strategy: BlurStrategy,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            kernel_size: 51,
            kernel_sigma: 51.0 / 6.0,
            temperature: 0.028,
            momentum: 0.85,
            scale: 0.92,
            beta_h: 0.18,
            lambda_alpha: 3.0,
            r_min: 0.18,
            r_max: 0.28,
            strategy: BlurStrategy::DifficultyAware,
        }
    }
}

impl BlurConfig {
    /// Desk-scale preset: kernel width scaled down proportionally from the
    /// full-scale default (anchored at 7 for 32-pixel images).
    pub fn desk(image_size: usize) -> Self {
        let mut k = ((image_size * 7 + 16) / 32) | 1;
        if k < 3 {
            k = 3;
        }
        BlurConfig {
            kernel_size: k,
            kernel_sigma: k as f64 / 6.0,
            ..BlurConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "blur: kernel_size {} must be odd and at least 3",
                self.kernel_size
            )));
        }
        if !(self.kernel_sigma > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::invalid(
                "blur: kernel_sigma and temperature must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "blur: momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max <= 0.5) {
            return Err(Error::invalid(format!(
                "blur: radii must satisfy 0 < r_min <= r_max <= 0.5, got ({}, {})",
                self.r_min, self.r_max
            )));
        }
        if self.scale <= 0.0 || self.beta_h < 0.0 || self.lambda_alpha <= 0.0 {
            return Err(Error::invalid(
                "blur: scale and lambda_alpha must be positive, beta_h non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Row-wise cosine similarity between two `B x C` embedding matrices.
pub fn cosine_rows(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (rows, cols) = a.dims2()?;
    if b.shape() != [rows, cols] {
        return Err(Error::invalid(format!(
            "cosine_rows: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    (0..rows)
        .map(|i| crate::tensor::cosine(a.row(i), b.row(i)))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch-standardizes similarities and squashes them through a temperature
/// sigmoid: easy samples (above batch mean) approach 1, hard ones 0.
pub fn easiness(similarities: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::invalid("easiness: empty batch"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("easiness: temperature {temperature}")));
    }
    let n = similarities.len() as f64;
    let mean = similarities.iter().sum::<f64>() / n;
    let var = similarities.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-6;
    Ok(similarities
        .iter()
        .map(|s| sigmoid((s - mean) / denom / temperature))
        .collect())
}

/// Per-stimulus EMA of easiness. Entries start at 0.5 (neutral) on first
/// update and persist for the lifetime of an adaptation run.
#[derive(Debug, Clone)]
pub struct DifficultyBank {
    momentum: f64,
    entries: BTreeMap<u64, f64>,
}

impl DifficultyBank {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "difficulty bank: momentum {momentum} outside [0, 1)"
            )));
        }
        Ok(DifficultyBank {
            momentum,
            entries: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.entries.get(&id).copied()
    }

    /// Folds new easiness values into the bank and returns the updated
    /// hardness `1 - b` per id, in input order.
    pub fn update(&mut self, ids: &[u64], easiness: &[f64]) -> Result<Vec<f64>> {
        if ids.len() != easiness.len() {
            return Err(Error::invalid(format!(
                "bank update: {} ids but {} values",
                ids.len(),
                easiness.len()
            )));
        }
        if let Some(&bad) = easiness.iter().find(|&&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::invalid(format!(
                "bank update: easiness {bad} outside [0, 1]"
            )));
        }
        let mut hardness = Vec::with_capacity(ids.len());
        for (&id, &e) in ids.iter().zip(easiness) {
            let entry = self.entries.entry(id).or_insert(0.5);
            *entry = self.momentum * *entry + (1.0 - self.momentum) * e;
            hardness.push(1.0 - *entry);
        }
        Ok(hardness)
    }

    /// Hardness for an id, 0.5 for never-seen stimuli.
    pub fn hardness(&self, id: u64) -> f64 {
        1.0 - self.entries.get(&id).copied().unwrap_or(0.5)
    }
}

/// Sampled 2-D Gaussian kernel renormalized to sum exactly 1.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Tensor> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "gaussian_kernel: size {size} must be odd and at least 3"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("gaussian_kernel: sigma {sigma}")));
    }
    let half = (size / 2) as isize;
    let mut data = Vec::with_capacity(size * size);
    let mut sum = 0.0;
    for p in -half..=half {
        for q in -half..=half {
            let v = (-((p * p + q * q) as f64) / (2.0 * sigma * sigma)).exp();
            data.push(v);
            sum += v;
        }
    }
    for v in &mut data {
        *v /= sum;
    }
    Tensor::new(vec![size, size], data)
}

fn reflect(coord: isize, len: usize) -> usize {
    // Mirror without repeating the edge sample: -1 -> 1, len -> len - 2.
    let len = len as isize;
    let mut c = coord;
    loop {
        if c < 0 {
            c = -c;
        } else if c >= len {
            c = 2 * (len - 1) - c;
        } else {
            return c as usize;
        }
    }
}

/// Full-image convolution with reflect padding. The kernel must fit the
/// mirrored border, i.e. `kernel_size <= 2 * min(H, W) - 1`.
pub fn uniform_blur(image: &Image, kernel: &Tensor) -> Result<Image> {
    let (kh, kw) = kernel.dims2()?;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::invalid("uniform_blur: kernel must be odd and square"));
    }
    let half = (kh / 2) as isize;
    if half as usize >= image.height.min(image.width) {
        return Err(Error::invalid(format!(
            "uniform_blur: kernel {kh} too large for {}x{} image",
            image.height, image.width
        )));
    }
    let (h, w) = (image.height, image.width);
    let mut out = vec![0.0; h * w * 3];
    for u in 0..h {
        for v in 0..w {
            let mut acc = [0.0f64; 3];
            for dp in -half..=half {
                let su = reflect(u as isize + dp, h);
                for dq in -half..=half {
                    let sv = reflect(v as isize + dq, w);
                    let kval = kernel.row((dp + half) as usize)[(dq + half) as usize];
                    let px = image.pixel(su, sv);
                    for c in 0..3 {
                        acc[c] += kval * px[c];
                    }
                }
            }
            let base = (u * w + v) * 3;
            for c in 0..3 {
                // Convex combination of in-range values; guard fp overshoot.
                out[base + c] = acc[c].clamp(0.0, 1.0);
            }
        }
    }
    Image::new(h, w, out)
}

/// Fallback saliency radius used for (near-)constant images.
pub const SALIENCY_FALLBACK: f64 = 0.25;

/// Radius (as a fraction of `min(H, W)`) of the smallest disc around the
/// luminance-deviation centre of mass that holds at least half of the total
/// deviation mass. Clamped into `(0.05, 0.5]`.
pub fn saliency_radius(image: &Image) -> f64 {
    let (h, w) = (image.height, image.width);
    let mut mass = vec![0.0; h * w];
    let mut total_lum = 0.0;
    for u in 0..h {
        for v in 0..w {
            total_lum += image.luminance(u, v);
        }
    }
    let mean_lum = total_lum / (h * w) as f64;
    let mut total = 0.0;
    for u in 0..h {
        for v in 0..w {
            let m = (image.luminance(u, v) - mean_lum).abs();
            mass[u * w + v] = m;
            total += m;
        }
    }
    if total < 1e-12 {
        return SALIENCY_FALLBACK;
    }
    let mut com_u = 0.0;
    let mut com_v = 0.0;
    for u in 0..h {
        for v in 0..w {
            com_u += mass[u * w + v] * u as f64;
            com_v += mass[u * w + v] * v as f64;
        }
    }
    com_u /= total;
    com_v /= total;
    let mut by_distance: Vec<(f64, f64)> = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let du = u as f64 - com_u;
            let dv = v as f64 - com_v;
            by_distance.push(((du * du + dv * dv).sqrt(), mass[u * w + v]));
        }
    }
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut radius_px = by_distance.last().map(|p| p.0).unwrap_or(0.0);
    for (d, m) in by_distance {
        acc += m;
        if acc >= 0.5 * total {
            radius_px = d;
            break;
        }
    }
    (radius_px / h.min(w) as f64).clamp(0.05, 0.5)
}

/// Clear-disc radius from saliency and hardness, clamped into
/// `[r_min, r_max]`.
pub fn clear_radius(rho: f64, hardness: f64, cfg: &BlurConfig) -> f64 {
    (rho * cfg.scale * (1.0 + cfg.beta_h * hardness)).clamp(cfg.r_min, cfg.r_max)
}

/// Radial blend mask: 1 at the image centre, decaying as
/// `exp(-lambda * sqrt(d^2 / (r_px^2 + eps)))` with the radius converted to
/// pixels via `min(H, W)`.
pub fn blend_mask(height: usize, width: usize, radius: f64, lambda_alpha: f64) -> Result<Tensor> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("blend_mask: zero dimension"));
    }
    if !(radius > 0.0) || !(lambda_alpha > 0.0) {
        return Err(Error::invalid(format!(
            "blend_mask: radius {radius} and lambda {lambda_alpha} must be positive"
        )));
    }
    let r_px = radius * height.min(width) as f64;
    let denom = r_px * r_px + 1e-6;
    let c_u = (height as f64 - 1.0) / 2.0;
    let c_v = (width as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            let du = u as f64 - c_u;
            let dv = v as f64 - c_v;
            data.push((-lambda_alpha * ((du * du + dv * dv) / denom).sqrt()).exp());
        }
    }
    Tensor::new(vec![height, width], data)
}

/// Pixelwise blend `mask * clean + (1 - mask) * base`.
pub fn blend_images(mask: &Tensor, clean: &Image, base: &Image) -> Result<Image> {
    let (h, w) = mask.dims2()?;
    if clean.height != h || clean.width != w || base.height != h || base.width != w {
        return Err(Error::invalid("blend_images: dimension mismatch"));
    }
    let mut out = vec![0.0; h * w * 3];
    for u in 0..h {
        for v in 0..w {
            let a = mask.row(u)[v];
            let cp = clean.pixel(u, v);
            let bp = base.pixel(u, v);
            let base_idx = (u * w + v) * 3;
            for c in 0..3 {
                out[base_idx + c] = (a * cp[c] + (1.0 - a) * bp[c]).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(h, w, out)
}

/// Per-stimulus cache: the fully blurred copy and the saliency radius are
/// both step-invariant, so training computes them once.
#[derive(Debug, Clone)]
pub struct BlurContext {
    pub base: Image,
    pub rho: f64,
}

/// Precomputes the step-invariant parts of the blur pipeline for one image.
pub fn prepare_blur_context(image: &Image, cfg: &BlurConfig) -> Result<BlurContext> {
    cfg.validate()?;
    let kernel = gaussian_kernel(cfg.kernel_size, cfg.kernel_sigma)?;
    Ok(BlurContext {
        base: uniform_blur(image, &kernel)?,
        rho: saliency_radius(image),
    })
}

/// Builds the supervision image for one stimulus given its cached context and
/// current hardness.
pub fn difficulty_blur_cached(
    image: &Image,
    ctx: &BlurContext,
    hardness: f64,
    cfg: &BlurConfig,
) -> Result<Image> {
    match cfg.strategy {
        BlurStrategy::Clean => Ok(image.clone()),
        BlurStrategy::Whole => Ok(ctx.base.clone()),
        BlurStrategy::FixedRadius => {
            let mask = blend_mask(
                image.height,
                image.width,
                (cfg.r_min + cfg.r_max) / 2.0,
                cfg.lambda_alpha,
            )?;
            blend_images(&mask, image, &ctx.base)
        }
        BlurStrategy::DifficultyAware => {
            let r = clear_radius(ctx.rho, hardness, cfg);
            let mask = blend_mask(image.height, image.width, r, cfg.lambda_alpha)?;
            blend_images(&mask, image, &ctx.base)
        }
    }
}

/// Convenience wrapper that recomputes the context and reads hardness from
/// the bank; training uses the cached variant.
pub fn difficulty_blur(
    image: &Image,
    stimulus_id: u64,
    bank: &DifficultyBank,
    cfg: &BlurConfig,
) -> Result<Image> {
    let ctx = prepare_blur_context(image, cfg)?;
    difficulty_blur_cached(image, &ctx, bank.hardness(stimulus_id), cfg)
}

/// Writes an image as binary PPM (P6) with 8-bit channels.
pub fn write_ppm(image: &Image, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes)
}

/// Renders a `[0, 1]` mask as a grayscale image for debugging.
pub fn mask_to_image(mask: &Tensor) -> Result<Image> {
    let (h, w) = mask.dims2()?;
    let mut pixels = Vec::with_capacity(h * w * 3);
    for v in mask.data() {
        let g = v.clamp(0.0, 1.0);
        pixels.extend_from_slice(&[g, g, g]);
    }
    Image::new(h, w, pixels)
}
