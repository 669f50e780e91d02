//! Training objective, optimizer and parameter initialization.

mod adam;
mod init;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{init_params, init_params_with, uniform_bound, InitScheme};
pub use loss::{accuracy, cross_entropy, LossValue, PROB_FLOOR};
