//! Synthetic density images for desk-scale experiments.
//!
//! Each image is a smooth random field (a sum of Gaussian blobs) pushed
//! through a soft threshold chosen so that exactly the requested fraction of
//! pixels is brighter than 0.5. The fraction is drawn uniformly from the
//! class's density band.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{Augmentation, GrayImage};
use crate::error::{Error, Result};
use crate::hash::fnv1a_parts;

/// Bright-tissue fraction bands for BI-RADS I..IV.
pub const DENSITY_BANDS: [(f64, f64); 4] = [(0.0, 0.25), (0.26, 0.50), (0.51, 0.75), (0.76, 1.0)];

/// An image with its class and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: u8,
    pub source_id: String,
    pub augmentation: Option<Augmentation>,
}

/// Renders one image whose fraction of pixels above 0.5 is
/// `round(fraction * size^2) / size^2`.
pub fn render_density(size: usize, fraction: f64, rng: &mut impl Rng) -> GrayImage {
    let n = size * size;
    let blobs = rng.random_range(3..=8);
    let s = size as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(0.08 * s..0.3 * s).max(0.75),
                rng.random_range(0.5..1.5),
            )
        })
        .collect();
    let jitter = Uniform::new(0.0, 1e-6).expect("valid range");
    let field: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let v: f64 = params
                .iter()
                .map(|&(cx, cy, sigma, amp)| {
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    amp * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            v + jitter.sample(rng)
        })
        .collect();

    let mut sorted = field.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let bright = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let spread = (sorted[0] - sorted[n - 1]).max(1e-9);
    let threshold = match bright {
        0 => sorted[0] + 0.05 * spread,
        b if b == n => sorted[n - 1] - 0.05 * spread,
        b => 0.5 * (sorted[b - 1] + sorted[b]),
    };
    let softness = 0.08 * spread;
    let pixels = field
        .iter()
        .map(|&f| {
            let t = ((f - threshold) / softness).tanh();
            // bright tissue in (0.5, 1], background in [0.05, 0.5)
            if f > threshold {
                0.5 + 0.5 * t.max(1e-3)
            } else {
                0.5 + 0.45 * t.min(-1e-3)
            }
        })
        .collect();
    GrayImage::new(size, size, pixels).expect("sizes agree")
}

/// `n_per_class` images for each of the four classes, deterministic in
/// `seed`. Source ids are `synth-<class>-<index>`.
pub fn generate_synthetic(n_per_class: usize, size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if n_per_class < 1 {
        return Err(Error::config("synthetic dataset needs at least one image per class"));
    }
    if size < 2 {
        return Err(Error::config("synthetic images must be at least 2x2"));
    }
    let mut out = Vec::with_capacity(4 * n_per_class);
    for (label, &(lo, hi)) in DENSITY_BANDS.iter().enumerate() {
        for i in 0..n_per_class {
            let key = fnv1a_parts([&seed.to_le_bytes()[..], &[label as u8], &(i as u64).to_le_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let fraction = rng.random_range(lo..=hi);
            out.push(LabeledImage {
                image: render_density(size, fraction, &mut rng),
                label: label as u8,
                source_id: format!("synth-{label}-{i:05}"),
                augmentation: None,
            });
        }
    }
    Ok(out)
}
