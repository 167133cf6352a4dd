//! Procedural stimulus renderer.
//!
//! Latents map to images through Gaussian blobs on a mid-gray canvas. Each
//! consecutive group of four latent coordinates drives one blob: the first
//! three control horizontal position, vertical position, and brightness, the
//! fourth controls the blob's width. Every coordinate therefore leaves a
//! visible trace, so distinct latents render to distinct images.

use crate::error::{Error, Result};
use crate::image::Image;

const BACKGROUND: f64 = 0.5;
/// Fraction of the image the blob centres can wander from the middle.
const POSITION_SWING: f64 = 0.35;
/// Brightness is `BASE + GAIN * tanh(intensity)`, strictly positive so a
/// blob never vanishes and its position/width coordinates stay observable.
const INTENSITY_BASE: f64 = 0.28;
const INTENSITY_GAIN: f64 = 0.20;
/// Blob width is `(image_size / 8) * (1 + 0.5 * tanh(width))` pixels.
const WIDTH_SWING: f64 = 0.5;
/// Support cutoff in units of the blob width.
const SUPPORT: f64 = 3.0;

/// Per-blob colour directions, cycled when there are more than four blobs.
const PALETTE: [[f64; 3]; 4] = [
    [1.0, 0.35, 0.25],
    [0.25, 1.0, 0.35],
    [0.35, 0.25, 1.0],
    [0.95, 0.95, 0.3],
];

struct Blob {
    cu: f64,
    cv: f64,
    gain: f64,
    width: f64,
    colour: [f64; 3],
}

/// Renders the deterministic image for a latent vector. Needs at least four
/// coordinates (one full blob group); trailing coordinates beyond the last
/// complete group are ignored.
pub fn render_stimulus(z: &[f64], image_size: usize) -> Result<Image> {
    if z.len() < 4 {
        return Err(Error::invalid(format!(
            "render: latent length {} is below one blob group of 4",
            z.len()
        )));
    }
    if image_size < 8 {
        return Err(Error::invalid(format!("render: image size {image_size}")));
    }
    let side = image_size as f64;
    let blobs: Vec<Blob> = z
        .chunks_exact(4)
        .enumerate()
        .map(|(g, c)| Blob {
            cu: (0.5 + POSITION_SWING * c[1].tanh()) * (side - 1.0),
            cv: (0.5 + POSITION_SWING * c[0].tanh()) * (side - 1.0),
            gain: INTENSITY_BASE + INTENSITY_GAIN * c[2].tanh(),
            width: (side / 8.0) * (1.0 + WIDTH_SWING * c[3].tanh()),
            colour: PALETTE[g % PALETTE.len()],
        })
        .collect();
    let mut pixels = vec![BACKGROUND; image_size * image_size * 3];
    for blob in &blobs {
        let cutoff = SUPPORT * blob.width;
        let u_lo = ((blob.cu - cutoff).floor().max(0.0)) as usize;
        let u_hi = ((blob.cu + cutoff).ceil().min(side - 1.0)) as usize;
        let v_lo = ((blob.cv - cutoff).floor().max(0.0)) as usize;
        let v_hi = ((blob.cv + cutoff).ceil().min(side - 1.0)) as usize;
        for u in u_lo..=u_hi {
            for v in v_lo..=v_hi {
                let du = u as f64 - blob.cu;
                let dv = v as f64 - blob.cv;
                let d2 = du * du + dv * dv;
                if d2 > cutoff * cutoff {
                    continue;
                }
                let fall = (-d2 / (2.0 * blob.width * blob.width)).exp();
                let base = (u * image_size + v) * 3;
                for ch in 0..3 {
                    pixels[base + ch] += blob.gain * blob.colour[ch] * fall;
                }
            }
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(image_size, image_size, pixels)
}
