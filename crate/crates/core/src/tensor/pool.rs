use super::Tensor;
use crate::error::{Error, Result};

/// Average-pooling window and stride (height, width). No padding; the
/// output size follows the floor rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolSpec {
    pub fn square(size: usize) -> Self {
        PoolSpec {
            window: (size, size),
            stride: (size, size),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (wh, ww) = self.window;
        let (sh, sw) = self.stride;
        if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
            return Err(Error::dim(format!("invalid pooling spec {self:?}")));
        }
        if wh > h || ww > w {
            return Err(Error::dim(format!(
                "pooling window {wh}x{ww} larger than input {h}x{w}"
            )));
        }
        Ok(((h - wh) / sh + 1, (w - ww) / sw + 1))
    }
}

pub fn avg_pool2d_forward(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("avg_pool2d input")?;
    let (oh, ow) = spec.output_size(h, w)?;
    let (wh, ww) = spec.window;
    let (sh, sw) = spec.stride;
    let area = (wh * ww) as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = 0.0;
                for dy in 0..wh {
                    let row = &plane[(y * sh + dy) * w..];
                    acc += row[xo * sw..xo * sw + ww].iter().sum::<f64>();
                }
                out.push(acc / area);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Spreads each output gradient equally over the cells of its window.
pub fn avg_pool2d_backward(input_shape: &[usize], spec: &PoolSpec, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = match input_shape {
        &[a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::dim(format!("avg_pool2d: input shape {input_shape:?} is not rank 4"))),
    };
    let (oh, ow) = spec.output_size(h, w)?;
    grad_out.ensure_shape(&[n, c, oh, ow], "avg_pool2d grad_out")?;
    let (wh, ww) = spec.window;
    let (sh, sw) = spec.stride;
    let area = (wh * ww) as f64;
    let mut grad = vec![0.0; n * c * h * w];
    for (plane, gplane) in grad.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(oh * ow)) {
        for y in 0..oh {
            for xo in 0..ow {
                let share = gplane[y * ow + xo] / area;
                for dy in 0..wh {
                    let row = &mut plane[(y * sh + dy) * w..];
                    row[xo * sw..xo * sw + ww].iter_mut().for_each(|g| *g += share);
                }
            }
        }
    }
    Tensor::new(input_shape, grad)
}
