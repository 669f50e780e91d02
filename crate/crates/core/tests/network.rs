mod common;

use common::{max_abs_diff, random_tensor, rng};
use proptest::prelude::*;
use resdens::layers::Mode;
use resdens::network::{argmax_rows, build_network, Network, NetworkConfig, ParamSet};
use resdens::optim::cross_entropy;
use resdens::tensor::Tensor;
use resdens::Error;

fn tiny16() -> (Network, ParamSet) {
    build_network(NetworkConfig::preset("tiny").unwrap().with_input_size(16, 16).unwrap(), 4).unwrap()
}

#[test]
fn preset_layer_accounting() {
    for (name, convs, fcs) in [("36L", 33, 3), ("48L", 45, 3), ("70L", 67, 3), ("tiny", 9, 3)] {
        let cfg = NetworkConfig::preset(name).unwrap();
        assert_eq!((cfg.conv_layers(), cfg.fc_layers()), (convs, fcs), "{name}");
        assert_eq!(cfg.weight_layers(), convs + fcs);
        let net = Network::new(cfg).unwrap();
        let kinds: Vec<_> = net.param_specs().into_iter().filter(|s| s.kind.is_weight_layer()).collect();
        assert_eq!(kinds.len(), convs + fcs, "{name}");
    }
    let big = NetworkConfig::preset("70L").unwrap();
    assert_eq!(big.feature_map_size(), (14, 14));
    assert_eq!(big.flattened_features(), 14 * 14 * 256);
    assert_eq!(NetworkConfig::preset("tiny").unwrap().flattened_features(), 128);
}

#[test]
fn built_tiny_network_counts_its_weight_layers() {
    let (_, params) = build_network(NetworkConfig::preset("tiny").unwrap(), 1).unwrap();
    assert_eq!(
        (params.conv_layer_count(), params.fc_layer_count(), params.weight_layer_count()),
        (9, 3, 12)
    );
}

#[test]
fn probabilities_are_distributions_and_forward_is_pure() {
    let (net, params) = tiny16();
    let x = random_tensor(&mut rng(1), &[3, 1, 16, 16]);
    let before = params.clone();
    let (p, cache) = net.forward(&params, &x, Mode::Train).unwrap();
    assert_eq!(params, before);
    assert_eq!(p.shape(), &[3, 4]);
    for row in p.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(!net.running_updates(&cache).is_empty());
}

#[test]
fn train_forward_commits_running_stats() {
    let (net, mut params) = tiny16();
    let x = random_tensor(&mut rng(2), &[2, 1, 16, 16]);
    let before = params.buffer("stem.bn.running_mean").unwrap().clone();
    net.forward_train(&mut params, &x).unwrap();
    assert_ne!(params.buffer("stem.bn.running_mean").unwrap(), &before);
}

#[test]
fn duplicating_every_sample_leaves_gradients_unchanged() {
    let (net, params) = tiny16();
    let x = random_tensor(&mut rng(3), &[2, 1, 16, 16]);
    let labels = [1, 3];
    let grads = |x: &Tensor, labels: &[usize]| {
        let (p, cache) = net.forward(&params, x, Mode::Train).unwrap();
        let (_, g) = cross_entropy(&p, labels).unwrap();
        net.backward(&params, &cache, &g).unwrap()
    };
    let once = grads(&x, &labels);
    let twice = grads(&Tensor::stack(&[x.clone(), x.clone()]).unwrap(), &[1, 3, 1, 3]);
    for (name, g) in &once {
        assert!(max_abs_diff(g, &twice[name]) < 1e-12, "{name}");
    }
}

#[test]
fn eval_predictions_do_not_depend_on_batch_composition() {
    let (net, params) = tiny16();
    let x = random_tensor(&mut rng(4), &[4, 1, 16, 16]);
    let (all, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    for i in 0..4 {
        let single = Tensor::new(&[1, 1, 16, 16], x.data()[i * 256..(i + 1) * 256].to_vec()).unwrap();
        let (p, _) = net.forward(&params, &single, Mode::Eval).unwrap();
        let row = Tensor::new(&[1, 4], all.data()[i * 4..(i + 1) * 4].to_vec()).unwrap();
        assert!(max_abs_diff(&p, &row) < 1e-12);
    }
    let (probs, _) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert_eq!(net.predict(&params, &x).unwrap(), argmax_rows(&probs));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let (net, params) = tiny16();
    let x = random_tensor(&mut rng(5), &[2, 1, 16, 16]);
    let a = net.forward(&params, &x, Mode::Train).unwrap().0;
    let b = net.forward(&params, &x, Mode::Train).unwrap().0;
    assert_eq!(a.data(), b.data());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (net, params) = tiny16();
    let wrong = Tensor::zeros(&[1, 1, 32, 32]);
    assert!(matches!(net.forward(&params, &wrong, Mode::Eval), Err(Error::Dimension(_))));
    let (_, other) = build_network(NetworkConfig::preset("tiny").unwrap(), 4).unwrap();
    let x = Tensor::zeros(&[1, 1, 16, 16]);
    assert!(matches!(net.forward(&other, &x, Mode::Eval), Err(Error::Config(_))));
    let (_, cache) = net.forward(&params, &x, Mode::Eval).unwrap();
    assert!(matches!(
        net.backward(&params, &cache, &Tensor::zeros(&[1, 4])),
        Err(Error::Usage(_))
    ));
}

#[test]
fn invalid_architectures_are_config_errors() {
    let base = NetworkConfig::preset("tiny").unwrap();
    let mut no_proj = base.clone();
    no_proj.stages[1].projection = false;
    assert!(matches!(no_proj.validate(), Err(Error::Config(_))));
    assert!(matches!(base.clone().with_input_size(8, 8), Err(Error::Config(_))));
    assert!(matches!(base.clone().with_classes(3), Err(Error::Config(_))));
    assert!(NetworkConfig::parse("name = \"x\"\nbogus = 1\n").is_err());
    assert_eq!(NetworkConfig::parse(&base.to_text()).unwrap(), base);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_ignores_positive_scaling(v in prop::collection::vec(0.0f64..1.0, 8), c in 0.01f64..100.0) {
        let p = Tensor::new(&[2, 4], v).unwrap();
        prop_assert_eq!(argmax_rows(&p), argmax_rows(&p.scale(c)));
    }
}
