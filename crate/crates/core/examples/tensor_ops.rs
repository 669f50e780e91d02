//! Convolution, pooling, ReLU and softmax on a small hand-made batch.

use resdens::tensor::{avg_pool2d_forward, conv2d_forward, relu_forward, softmax, ConvSpec, PoolSpec, Tensor};

fn main() -> resdens::Result<()> {
    // one 1-channel 4x4 image holding 0..16
    let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
    // 3x3 Laplacian-style kernel with zero padding
    let w = Tensor::new(&[1, 1, 3, 3], vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0])?;
    let b = Tensor::zeros(&[1]);
    let y = conv2d_forward(&x, &w, &b, &ConvSpec::same(3))?;
    println!("conv   {:?}: {:?}", y.shape(), y.data());

    let r = relu_forward(&y);
    println!("relu   {:?}: {:?}", r.shape(), r.data());

    let spec = PoolSpec {
        window: (2, 2),
        stride: (2, 2),
    };
    let p = avg_pool2d_forward(&x, &spec)?;
    println!("pool   {:?}: {:?}", p.shape(), p.data());

    let logits = Tensor::new(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 1000.0, 0.0, 0.0, -1000.0])?;
    let probs = softmax(&logits)?;
    println!("softmax {:?}: {:?}", probs.shape(), probs.data());
    Ok(())
}
