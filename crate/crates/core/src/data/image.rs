//! Grayscale images and the geometric operations used for preprocessing
//! and augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale image with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::dim(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Fraction of pixels strictly brighter than `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        self.pixels.iter().filter(|&&p| p > threshold).count() as f64 / self.pixels.len() as f64
    }

    /// `[1, 1, H, W]` tensor for feeding the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.pixels.clone()).expect("image is non-empty")
    }
}

/// Stacks images of identical size into an `[N, 1, H, W]` batch.
pub fn images_to_batch<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::dim(format!(
                    "batch mixes {}x{} and {}x{} images",
                    d.1, d.0, img.width, img.height
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::dim("empty image batch"))?;
    Tensor::new(&[n, 1, h, w], data)
}

/// Rotation (degrees, counter-clockwise as displayed) followed by optional
/// horizontal and vertical flips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub angle: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub fn rotation(angle: f64) -> Self {
        Augmentation {
            angle,
            hflip: false,
            vflip: false,
        }
    }
}

/// Bilinear resize on the pixel-center grid: output sample `i` reads the
/// source at `(i + 0.5) * in / out - 0.5`, clamped to the edge pixels.
pub fn resize(img: &GrayImage, height: usize, width: usize) -> Result<GrayImage> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!("resize target {width}x{height} must be at least 1x1")));
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(height, img.height);
    let xs = axis(width, img.width);
    let mut pixels = Vec::with_capacity(height * width);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(width, height, pixels)
}

/// `(cos, sin)` of an angle in degrees, exact at multiples of 90.
fn cos_sin(angle: f64) -> (f64, f64) {
    let a = angle.rem_euclid(360.0);
    if a == 0.0 {
        (1.0, 0.0)
    } else if a == 90.0 {
        (0.0, 1.0)
    } else if a == 180.0 {
        (-1.0, 0.0)
    } else if a == 270.0 {
        (0.0, -1.0)
    } else {
        let r = a.to_radians();
        (r.cos(), r.sin())
    }
}

const SUPPORT_TOLERANCE: f64 = 1e-9;

/// Bilinear sample; points outside the pixel-center support read as 0.
fn sample(img: &GrayImage, sx: f64, sy: f64) -> f64 {
    let (maxx, maxy) = ((img.width - 1) as f64, (img.height - 1) as f64);
    if sx < -SUPPORT_TOLERANCE || sy < -SUPPORT_TOLERANCE || sx > maxx + SUPPORT_TOLERANCE || sy > maxy + SUPPORT_TOLERANCE {
        return 0.0;
    }
    let (sx, sy) = (sx.clamp(0.0, maxx), sy.clamp(0.0, maxy));
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates about the image center, counter-clockwise as displayed, keeping
/// the image size. Uncovered pixels are filled with 0.
pub fn rotate(img: &GrayImage, angle: f64) -> GrayImage {
    let (c, s) = cos_sin(angle);
    if (c, s) == (1.0, 0.0) {
        return img.clone();
    }
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    GrayImage::from_fn(img.width, img.height, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        sample(img, cx + dx * c - dy * s, cy + dx * s + dy * c).clamp(0.0, 1.0)
    })
}

pub fn hflip(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width, img.height, |x, y| img.get(img.width - 1 - x, y))
}

pub fn vflip(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width, img.height, |x, y| img.get(x, img.height - 1 - y))
}

/// Rotation first, then the flips.
pub fn augment(img: &GrayImage, aug: &Augmentation) -> GrayImage {
    let mut out = rotate(img, aug.angle);
    if aug.hflip {
        out = hflip(&out);
    }
    if aug.vflip {
        out = vflip(&out);
    }
    out
}
