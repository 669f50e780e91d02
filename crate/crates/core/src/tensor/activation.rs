use super::Tensor;
use crate::error::Result;

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(0.0))
}

/// Passes the gradient where `x > 0`. The subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.ensure_shape(x.shape(), "relu grad_out")?;
    Ok(Tensor::from_fn(x.shape(), |i| {
        if x.data()[i] > 0.0 {
            grad_out.data()[i]
        } else {
            0.0
        }
    }))
}

/// Row-wise softmax over the last axis of a `[N, K]` tensor, with the row
/// maximum subtracted first so large logits cannot overflow.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, k] = logits.dims2("softmax logits")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(logits.shape(), out)
}
