//! Command implementations behind the `resdens` binary: dataset
//! preparation, synthetic data, training, evaluation and gradient checks.

pub mod checkpoint;
mod commands;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod prepare;
pub mod train;

pub use checkpoint::{Checkpoint, Entry};
pub use commands::{ClassMode, CommandFile};
pub use eval::{cmd_evaluate, EvalConfig, EvalReport};
pub use gradcheck::{cmd_gradcheck, GradcheckConfig, GradcheckReport, Kernels};
pub use metrics::{MetricsRow, METRICS_HEADER};
pub use prepare::{cmd_prepare, cmd_synth, PrepareConfig, SynthConfig};
pub use train::{cmd_train, params_digest, TrainRunConfig, TrainSummary, Trainer};
