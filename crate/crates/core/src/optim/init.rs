use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::network::{BufferKind, Network, ParamKind, ParamSet};
use crate::tensor::Tensor;

/// Range of the uniform weight initializer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// `b = sqrt(6 / (fan_in + fan_out))`.
    FanBased,
    /// The same `b` for every weight tensor.
    Fixed(f64),
}

pub fn uniform_bound(kind: ParamKind, scheme: InitScheme) -> Option<f64> {
    let (fan_in, fan_out) = match kind {
        ParamKind::ConvWeight { fan_in, fan_out } | ParamKind::FcWeight { fan_in, fan_out } => (fan_in, fan_out),
        _ => return None,
    };
    Some(match scheme {
        InitScheme::FanBased => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        InitScheme::Fixed(b) => b,
    })
}

pub fn init_params(network: &Network, seed: u64) -> Result<ParamSet> {
    init_params_with(network, seed, InitScheme::FanBased)
}

/// Weights ~ Uniform(-b, b); biases and BN shifts zero; BN scales one.
/// Each tensor draws from its own stream keyed by `(seed, name)`, so the
/// result does not depend on construction order.
pub fn init_params_with(network: &Network, seed: u64, scheme: InitScheme) -> Result<ParamSet> {
    let mut params = ParamSet::new(network.config().hash(), seed);
    for spec in network.param_specs() {
        let value = match spec.kind {
            ParamKind::Bias | ParamKind::Beta => Tensor::zeros(&spec.shape),
            ParamKind::Gamma => Tensor::full(&spec.shape, 1.0),
            kind => {
                let b = uniform_bound(kind, scheme).expect("weight kinds have a bound");
                let dist = Uniform::new(-b, b).map_err(|e| Error::config(format!("init bound {b}: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(fnv1a(spec.name.as_bytes()));
                let n: usize = spec.shape.iter().product();
                Tensor::new(&spec.shape, dist.sample_iter(&mut rng).take(n).collect())?
            }
        };
        params.insert(&spec.name, spec.kind, value)?;
    }
    for spec in network.buffer_specs() {
        let value = match spec.kind {
            BufferKind::RunningMean => Tensor::zeros(&spec.shape),
            BufferKind::RunningVar => Tensor::full(&spec.shape, 1.0),
        };
        params.insert_buffer(&spec.name, value)?;
    }
    Ok(params)
}
