mod common;

use common::{max_abs_diff, random_tensor, rng};
use proptest::prelude::*;
use resdens::layers::{
    batchnorm_backward, batchnorm_forward, residual_block_backward, residual_block_forward, BatchNorm,
    BatchNormConfig, BatchNormState, ConvBn, Mode, Projection, ResidualBlock,
};
use resdens::tensor::{ConvSpec, Tensor};
use resdens::Error;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn fd_worst(x: &Tensor, analytic: &Tensor, loss: impl Fn(&Tensor) -> f64) -> f64 {
    let h = 1e-6;
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        worst = worst.max((analytic.data()[i] - (up - down) / (2.0 * h)).abs());
    }
    worst
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[3, 2, 3, 3]);
    let gamma = random_tensor(&mut r, &[2]);
    let beta = random_tensor(&mut r, &[2]);
    let (rm, rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
    let go = random_tensor(&mut r, x.shape());
    let bn = |gamma, beta| BatchNorm {
        gamma,
        beta,
        running_mean: &rm,
        running_var: &rv,
        config: BatchNormConfig::default(),
    };
    let (_, cache) = batchnorm_forward(&x, &bn(&gamma, &beta), Mode::Train).unwrap();
    let g = batchnorm_backward(&cache, &go).unwrap();
    let out = |x: &Tensor, gm: &Tensor, bt: &Tensor| {
        let layer = BatchNorm {
            gamma: gm,
            beta: bt,
            ..bn(&gamma, &beta)
        };
        dot(&batchnorm_forward(x, &layer, Mode::Train).unwrap().0, &go)
    };
    assert!(fd_worst(&x, &g.input, |x| out(x, &gamma, &beta)) <= 1e-6);
    assert!(fd_worst(&gamma, &g.gamma, |gm| out(&x, gm, &beta)) <= 1e-6);
    assert!(fd_worst(&beta, &g.beta, |bt| out(&x, &gamma, bt)) <= 1e-6);
}

#[test]
fn batchnorm_running_stats_blend_with_momentum() {
    let mut bn = BatchNormState::new(1, BatchNormConfig::default());
    let x = Tensor::new(&[4, 1, 1, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    bn.forward(&x, Mode::Train).unwrap();
    // batch mean 3, biased variance 3.5
    assert!((bn.running_mean.data()[0] - 0.3).abs() < 1e-15);
    assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 3.5)).abs() < 1e-15);
    let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
    let expect = (1.0 - 0.3) / (1.25f64 + 1e-5).sqrt();
    assert!((y.data()[0] - expect).abs() < 1e-12);
}

#[test]
fn batchnorm_rejects_single_element_batches() {
    let mut bn = BatchNormState::new(1, BatchNormConfig::default());
    let x = Tensor::full(&[1, 1, 1, 1], 2.0);
    assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::DegenerateStatistics(_))));
    assert!(bn.forward(&x, Mode::Eval).is_ok());
}

struct Owned {
    units: Vec<[Tensor; 6]>,
    proj: Option<[Tensor; 2]>,
}

impl Owned {
    fn new(seed: u64, cin: usize, cout: usize) -> Self {
        let mut r = rng(seed);
        let units = (0..2)
            .map(|i| {
                let fan = if i == 0 { cin } else { cout };
                [
                    random_tensor(&mut r, &[cout, fan, 3, 3]),
                    random_tensor(&mut r, &[cout]),
                    Tensor::full(&[cout], 1.3),
                    random_tensor(&mut r, &[cout]),
                    Tensor::zeros(&[cout]),
                    Tensor::full(&[cout], 1.0),
                ]
            })
            .collect();
        let proj = (cin != cout).then(|| [random_tensor(&mut r, &[cout, cin, 1, 1]), random_tensor(&mut r, &[cout])]);
        Owned { units, proj }
    }

    fn view(&self) -> ResidualBlock<'_> {
        ResidualBlock {
            units: self
                .units
                .iter()
                .map(|[w, b, g, bt, rm, rv]| ConvBn {
                    weight: w,
                    bias: b,
                    spec: ConvSpec::same(3),
                    bn: BatchNorm {
                        gamma: g,
                        beta: bt,
                        running_mean: rm,
                        running_var: rv,
                        config: BatchNormConfig::default(),
                    },
                })
                .collect(),
            projection: self.proj.as_ref().map(|[w, b]| Projection { weight: w, bias: b }),
        }
    }
}

#[test]
fn residual_block_gradients_match_finite_differences() {
    for (cin, cout) in [(2, 2), (2, 3)] {
        let mut block = Owned::new(11, cin, cout);
        let mut r = rng(12);
        let x = random_tensor(&mut r, &[2, cin, 4, 4]);
        let (y, cache) = residual_block_forward(&x, &block.view(), Mode::Train).unwrap();
        let go = random_tensor(&mut r, y.shape());
        let g = residual_block_backward(&block.view(), &cache, &go).unwrap();
        let base = block.units[0][0].clone();
        assert!(fd_worst(&x, &g.input, |x| dot(&residual_block_forward(x, &block.view(), Mode::Train).unwrap().0, &go)) <= 1e-6);
        let worst = fd_worst(&base, &g.units[0].weight, |w| {
            let mut b = Owned { units: block.units.clone(), proj: block.proj.clone() };
            b.units[0][0] = w.clone();
            dot(&residual_block_forward(&x, &b.view(), Mode::Train).unwrap().0, &go)
        });
        assert!(worst <= 1e-6, "conv1 weight worst {worst}");
        block.units[0][0] = base;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The input gradient is the sum of what flows back through the
    /// residual branch and through the shortcut.
    #[test]
    fn input_gradient_is_the_sum_of_both_paths(seed in 0u64..10_000, project in any::<bool>()) {
        let cout = if project { 3 } else { 2 };
        let block = Owned::new(seed, 2, cout);
        let mut r = rng(seed + 1);
        let x = random_tensor(&mut r, &[2, 2, 3, 3]);
        let (y, cache) = residual_block_forward(&x, &block.view(), Mode::Train).unwrap();
        let go = random_tensor(&mut r, y.shape());
        let g = residual_block_backward(&block.view(), &cache, &go).unwrap();
        let sum = g.input_via_residual.add(&g.input_via_shortcut).unwrap();
        prop_assert!(max_abs_diff(&sum, &g.input) < 1e-14);
    }
}
