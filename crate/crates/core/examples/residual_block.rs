//! A projected residual block (2 -> 4 channels): forward pass, backward
//! pass, and the split of the input gradient between the two paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resdens::layers::{
    residual_block_backward, residual_block_forward, BatchNorm, BatchNormConfig, ConvBn, Mode, Projection,
    ResidualBlock,
};
use resdens::tensor::{ConvSpec, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-0.5..0.5))
}

fn main() -> resdens::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (cin, cout) = (2, 4);
    let w1 = random(&mut rng, &[cout, cin, 3, 3]);
    let w2 = random(&mut rng, &[cout, cout, 3, 3]);
    let pw = random(&mut rng, &[cout, cin, 1, 1]);
    let (zeros, ones) = (Tensor::zeros(&[cout]), Tensor::full(&[cout], 1.0));
    let unit = |weight| ConvBn {
        weight,
        bias: &zeros,
        spec: ConvSpec::same(3),
        bn: BatchNorm {
            gamma: &ones,
            beta: &zeros,
            running_mean: &zeros,
            running_var: &ones,
            config: BatchNormConfig::default(),
        },
    };
    let block = ResidualBlock {
        units: vec![unit(&w1), unit(&w2)],
        projection: Some(Projection {
            weight: &pw,
            bias: &zeros,
        }),
    };

    let x = random(&mut rng, &[3, cin, 6, 6]);
    let (y, cache) = residual_block_forward(&x, &block, Mode::Train)?;
    println!("input {:?} -> output {:?}", x.shape(), y.shape());

    let grads = residual_block_backward(&block, &cache, &Tensor::full(y.shape(), 1.0))?;
    println!("|dx| via residual branch {:.4}", grads.input_via_residual.max_abs());
    println!("|dx| via shortcut        {:.4}", grads.input_via_shortcut.max_abs());
    let sum = grads.input_via_residual.add(&grads.input_via_shortcut)?;
    let gap = sum.data().iter().zip(grads.input.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |dx - (residual + shortcut)| = {gap:.1e}");
    for (i, u) in grads.units.iter().enumerate() {
        println!("unit {i}: |dW| {:.4}  |dgamma| {:.4}", u.weight.max_abs(), u.gamma.max_abs());
    }
    Ok(())
}
