//! Architecture presets, parameter storage and the end-to-end forward,
//! backward and prediction passes.

mod config;
mod model;
mod params;

pub use config::{BatchNormSection, NetworkConfig, StageConfig, StemConfig};
pub use model::{argmax_rows, ForwardCache, Network};
pub use params::{BufferKind, BufferSpec, ParamKind, ParamSet, ParamSpec};

use crate::error::Result;

/// Validates `config`, derives the architecture and initializes its
/// parameters deterministically from `seed`.
pub fn build_network(config: NetworkConfig, seed: u64) -> Result<(Network, ParamSet)> {
    let network = Network::new(config)?;
    let params = crate::optim::init_params(&network, seed)?;
    Ok((network, params))
}
