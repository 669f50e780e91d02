//! 2-D cross-correlation with symmetric zero padding.
//!
//! Both passes lower each sample to a patch matrix (`im2col`) of shape
//! `(cin * kh * kw, out_h * out_w)` and reduce over it with plain loops. The
//! reduction order is fixed, so results are deterministic.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels.
    pub fn same(kernel: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::dim(format!("invalid conv spec {self:?}")));
        }
        let ph = in_h + 2 * self.padding;
        let pw = in_w + 2 * self.padding;
        if ph < kh || pw < kw {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn check(input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<Self> {
        let [n, cin, h, w] = input.dims4("conv2d input")?;
        let [cout, wcin, kh, kw] = weight.dims4("conv2d weight")?;
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d: input channel axis is {cin} but weight in-channel axis is {wcin}"
            )));
        }
        if (kh, kw) != spec.kernel {
            return Err(Error::dim(format!(
                "conv2d: weight kernel axes {kh}x{kw} disagree with spec kernel {:?}",
                spec.kernel
            )));
        }
        let (oh, ow) = spec.output_size(h, w)?;
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(sample: &[f64], g: &Geometry, spec: &ConvSpec, cols: &mut [f64]) {
    let ncols = g.cols();
    let pad = spec.padding as isize;
    for ci in 0..g.cin {
        let plane = &sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let r = (ci * g.kh + dy) * g.kw + dx;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for y in 0..g.oh {
                    let iy = (y * spec.stride + dy) as isize - pad;
                    let out = &mut row[y * g.ow..(y + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let ix = (x * spec.stride + dx) as isize - pad;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, spec: &ConvSpec, sample: &mut [f64]) {
    let ncols = g.cols();
    let pad = spec.padding as isize;
    for ci in 0..g.cin {
        let plane = &mut sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let r = (ci * g.kh + dy) * g.kw + dx;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for y in 0..g.oh {
                    let iy = (y * spec.stride + dy) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for x in 0..g.ow {
                        let ix = (x * spec.stride + dx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[y * g.ow + x];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,co,y,x] = bias[co] + sum input[n,ci,y*s-p+dy,x*s-p+dx] * weight[co,ci,dy,dx]`,
/// reading zeros outside the input.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = Geometry::check(input, weight, spec)?;
    bias.ensure_shape(&[g.cout], "conv2d bias")?;
    let (rows, ncols) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * ncols;
    let mut out = vec![0.0; g.n * out_per];
    let mut cols = vec![0.0; rows * ncols];
    let wd = weight.data();
    for n in 0..g.n {
        im2col(&input.data()[n * in_per..(n + 1) * in_per], &g, spec, &mut cols);
        let dst = &mut out[n * out_per..(n + 1) * out_per];
        for co in 0..g.cout {
            let orow = &mut dst[co * ncols..(co + 1) * ncols];
            orow.fill(bias.data()[co]);
            let wrow = &wd[co * rows..(co + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let crow = &cols[r * ncols..(r + 1) * ncols];
                orow.iter_mut().zip(crow).for_each(|(o, c)| *o += wv * c);
            }
        }
    }
    Tensor::new(&[g.n, g.cout, g.oh, g.ow], out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward(input: &Tensor, weight: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let g = Geometry::check(input, weight, spec)?;
    grad_out.ensure_shape(&[g.n, g.cout, g.oh, g.ow], "conv2d grad_out")?;
    let (rows, ncols) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * ncols;
    let wd = weight.data();

    let mut grad_input = vec![0.0; g.n * in_per];
    let mut grad_weight = vec![0.0; g.cout * rows];
    let mut grad_bias = vec![0.0; g.cout];
    let mut cols = vec![0.0; rows * ncols];
    let mut grad_cols = vec![0.0; rows * ncols];

    for n in 0..g.n {
        let go = &grad_out.data()[n * out_per..(n + 1) * out_per];
        im2col(&input.data()[n * in_per..(n + 1) * in_per], &g, spec, &mut cols);
        grad_cols.fill(0.0);
        for co in 0..g.cout {
            let grow = &go[co * ncols..(co + 1) * ncols];
            grad_bias[co] += grow.iter().sum::<f64>();
            let gw = &mut grad_weight[co * rows..(co + 1) * rows];
            let wrow = &wd[co * rows..(co + 1) * rows];
            for r in 0..rows {
                let crow = &cols[r * ncols..(r + 1) * ncols];
                gw[r] += crow.iter().zip(grow).map(|(c, g)| c * g).sum::<f64>();
                let wv = wrow[r];
                if wv != 0.0 {
                    let gc = &mut grad_cols[r * ncols..(r + 1) * ncols];
                    gc.iter_mut().zip(grow).for_each(|(d, g)| *d += wv * g);
                }
            }
        }
        col2im(&grad_cols, &g, spec, &mut grad_input[n * in_per..(n + 1) * in_per]);
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape(), grad_input)?,
        weight: Tensor::new(weight.shape(), grad_weight)?,
        bias: Tensor::new(&[g.cout], grad_bias)?,
    })
}
