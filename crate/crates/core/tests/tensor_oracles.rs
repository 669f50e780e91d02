mod common;

use common::{affine_oracle, conv_oracle, max_abs_diff, pool_oracle, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use resdens::tensor::{
    affine_backward, affine_forward, avg_pool2d_backward, avg_pool2d_forward, conv2d_backward, conv2d_forward,
    relu_backward, softmax, ConvSpec, PoolSpec, Tensor,
};

#[test]
fn conv_matches_nested_loops_on_random_shapes() {
    let mut r = rng(1);
    for _ in 0..120 {
        let (kh, kw): (usize, usize) = (r.random_range(1..=4), r.random_range(1..=4));
        let padding = r.random_range(0..=2);
        let stride = r.random_range(1..=3);
        let h = r.random_range(kh.saturating_sub(2 * padding).max(1)..=9);
        let w = r.random_range(kw.saturating_sub(2 * padding).max(1)..=9);
        let (n, cin, cout) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
        let spec = ConvSpec {
            kernel: (kh, kw),
            stride,
            padding,
        };
        let x = random_tensor(&mut r, &[n, cin, h, w]);
        let wt = random_tensor(&mut r, &[cout, cin, kh, kw]);
        let b = random_tensor(&mut r, &[cout]);
        let got = conv2d_forward(&x, &wt, &b, &spec).unwrap();
        assert!(max_abs_diff(&got, &conv_oracle(&x, &wt, &b, &spec)) <= 1e-12, "{spec:?} {:?}", x.shape());
    }
}

#[test]
fn pool_and_affine_match_nested_loops_on_random_shapes() {
    let mut r = rng(2);
    for _ in 0..120 {
        let spec = PoolSpec {
            window: (r.random_range(1..=3), r.random_range(1..=3)),
            stride: (r.random_range(1..=3), r.random_range(1..=3)),
        };
        let shape = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(3..=8), r.random_range(3..=8)];
        let x = random_tensor(&mut r, &shape);
        assert!(max_abs_diff(&avg_pool2d_forward(&x, &spec).unwrap(), &pool_oracle(&x, &spec)) <= 1e-12);

        let (n, d, m) = (r.random_range(1..=5), r.random_range(1..=12), r.random_range(1..=6));
        let a = random_tensor(&mut r, &[n, d]);
        let w = random_tensor(&mut r, &[d, m]);
        let b = random_tensor(&mut r, &[m]);
        assert!(max_abs_diff(&affine_forward(&a, &w, &b).unwrap(), &affine_oracle(&a, &w, &b)) <= 1e-12);
    }
}

/// Central difference of `sum(f(x) * r)` against an analytic gradient.
fn fd_error(x: &Tensor, analytic: &Tensor, r: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let h = 1e-6;
    let loss = |t: &Tensor| f(t).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
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
fn primitive_gradients_match_finite_differences() {
    let mut r = rng(3);
    let spec = ConvSpec {
        kernel: (3, 3),
        stride: 2,
        padding: 1,
    };
    let x = random_tensor(&mut r, &[2, 2, 5, 6]);
    let w = random_tensor(&mut r, &[3, 2, 3, 3]);
    let b = random_tensor(&mut r, &[3]);
    let g = random_tensor(&mut r, conv2d_forward(&x, &w, &b, &spec).unwrap().shape());
    let grads = conv2d_backward(&x, &w, &spec, &g).unwrap();
    assert!(fd_error(&x, &grads.input, &g, |x| conv2d_forward(x, &w, &b, &spec).unwrap()) <= 1e-6);
    assert!(fd_error(&w, &grads.weight, &g, |w| conv2d_forward(&x, w, &b, &spec).unwrap()) <= 1e-6);
    assert!(fd_error(&b, &grads.bias, &g, |b| conv2d_forward(&x, &w, b, &spec).unwrap()) <= 1e-6);

    let pool = PoolSpec::square(2);
    let g = random_tensor(&mut r, &[2, 2, 2, 3]);
    let gp = avg_pool2d_backward(x.shape(), &pool, &g).unwrap();
    assert!(fd_error(&x, &gp, &g, |x| avg_pool2d_forward(x, &pool).unwrap()) <= 1e-6);

    let a = random_tensor(&mut r, &[3, 4]);
    let wa = random_tensor(&mut r, &[4, 2]);
    let ba = random_tensor(&mut r, &[2]);
    let g = random_tensor(&mut r, &[3, 2]);
    let ga = affine_backward(&a, &wa, &g).unwrap();
    assert!(fd_error(&a, &ga.input, &g, |a| affine_forward(a, &wa, &ba).unwrap()) <= 1e-6);
    assert!(fd_error(&wa, &ga.weight, &g, |w| affine_forward(&a, w, &ba).unwrap()) <= 1e-6);
    assert!(fd_error(&ba, &ga.bias, &g, |b| affine_forward(&a, &wa, b).unwrap()) <= 1e-6);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn softmax_survives_huge_logits() {
    let z = Tensor::new(&[1, 3], vec![1000.0, 1000.0, -1000.0]).unwrap();
    let p = softmax(&z).unwrap();
    assert_eq!(p.data(), &[0.5, 0.5, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let p = softmax(&Tensor::new(&[3, 4], v).unwrap()).unwrap();
        for row in p.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }

    #[test]
    fn conv_is_linear_in_the_input(seed in 0u64..1000, alpha in -3.0f64..3.0) {
        let mut r = rng(seed);
        let spec = ConvSpec::same(3);
        let a = random_tensor(&mut r, &[1, 2, 4, 4]);
        let b = random_tensor(&mut r, &[1, 2, 4, 4]);
        let w = random_tensor(&mut r, &[2, 2, 3, 3]);
        let zero = Tensor::zeros(&[2]);
        let mixed = a.add(&b.scale(alpha)).unwrap();
        let lhs = conv2d_forward(&mixed, &w, &zero, &spec).unwrap();
        let rhs = conv2d_forward(&a, &w, &zero, &spec)
            .unwrap()
            .add(&conv2d_forward(&b, &w, &zero, &spec).unwrap().scale(alpha))
            .unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }
}
