//! Direct nested-loop references and fixtures shared by the integration
//! tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resdens::data::SplitSizes;
use resdens::harness::{cmd_prepare, cmd_synth, PrepareConfig, SynthConfig, TrainRunConfig};
use resdens::tensor::{ConvSpec, PoolSpec, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Tensor {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (s, p) = (spec.stride, spec.padding);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    let xv = |i: usize, c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((i * cin + c) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (y * s + ky) as isize - p as isize;
                                let sx = (xx * s + kx) as isize - p as isize;
                                acc += w.data()[((o * cin + c) * kh + ky) * kw + kx] * xv(i, c, sy, sx);
                            }
                        }
                    }
                    out[((i * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

pub fn pool_oracle(x: &Tensor, spec: &PoolSpec) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ((wh, ww), (sh, sw)) = (spec.window, spec.stride);
    let oh = (h - wh) / sh + 1;
    let ow = (w - ww) / sw + 1;
    let mut out = Vec::new();
    for i in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for dy in 0..wh {
                    for dx in 0..ww {
                        acc += x.data()[(i * h + y * sh + dy) * w + xx * sw + dx];
                    }
                }
                out.push(acc / (wh * ww) as f64);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).unwrap()
}

pub fn affine_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = b.data()[j];
            for k in 0..d {
                acc += x.data()[i * d + k] * w.data()[k * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    Tensor::new(&[n, m], out).unwrap()
}

/// Synthetic dataset split into exact train/val/test counts, without
/// rebalancing or expansion. Returns the prepared manifest path.
pub fn synthetic_split(root: &Path, n_per_class: usize, size: usize, counts: [usize; 3], seed: u64) -> PathBuf {
    let raw = root.join("raw");
    cmd_synth(&SynthConfig {
        n_per_class,
        size,
        seed,
        out: raw.clone(),
    })
    .unwrap();
    let out = root.join("prepared");
    cmd_prepare(&PrepareConfig {
        input: raw,
        out: out.clone(),
        seed,
        sizes: SplitSizes::Counts(counts),
        rebalance: false,
        expand: false,
        image_size: [size, size],
        ..Default::default()
    })
    .unwrap();
    out.join("manifest.csv")
}

/// Short deterministic training run on the tiny preset.
pub fn tiny_run(manifest: &Path, out: &Path, iterations: u64) -> TrainRunConfig {
    TrainRunConfig {
        preset: "tiny".into(),
        batch_size: 8,
        max_iterations: iterations,
        learning_rate: 1e-3,
        seed: 5,
        manifest: manifest.to_path_buf(),
        out: out.to_path_buf(),
        log_interval: 3,
        record_wall_time: false,
        ..Default::default()
    }
}
