pub mod data;
pub mod error;
pub mod harness;
mod hash;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
