use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, d] = input.dims2("affine input")?;
    let [wd, m] = weight.dims2("affine weight")?;
    if wd != d {
        return Err(Error::dim(format!(
            "affine: input feature axis is {d} but weight row axis is {wd}"
        )));
    }
    Ok((n, d, m))
}

/// `input[N,D] @ weight[D,M] + bias[M]`.
pub fn affine_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, m) = check(input, weight)?;
    bias.ensure_shape(&[m], "affine bias")?;
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(n * m);
    for row in x.chunks_exact(d) {
        let mut acc = bias.data().to_vec();
        for (k, &xv) in row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            acc.iter_mut().zip(&w[k * m..(k + 1) * m]).for_each(|(a, wv)| *a += xv * wv);
        }
        out.extend(acc);
    }
    Tensor::new(&[n, m], out)
}

pub fn affine_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<AffineGrads> {
    let (n, d, m) = check(input, weight)?;
    grad_out.ensure_shape(&[n, m], "affine grad_out")?;
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; n * d];
    let mut gw = vec![0.0; d * m];
    let mut gb = vec![0.0; m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        gb.iter_mut().zip(grow).for_each(|(b, gv)| *b += gv);
        for k in 0..d {
            let wrow = &w[k * m..(k + 1) * m];
            gx[i * d + k] = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
            let xv = x[i * d + k];
            gw[k * m..(k + 1) * m]
                .iter_mut()
                .zip(grow)
                .for_each(|(a, gv)| *a += xv * gv);
        }
    }
    Ok(AffineGrads {
        input: Tensor::new(&[n, d], gx)?,
        weight: Tensor::new(&[d, m], gw)?,
        bias: Tensor::new(&[m], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(affine_forward(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(affine_forward(&x, &w, &Tensor::zeros(&[2])).unwrap(), x);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(matches!(affine_forward(&x, &w, &Tensor::zeros(&[2])), Err(Error::Dimension(_))));
    }
}
