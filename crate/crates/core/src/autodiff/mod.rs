//! Reverse-mode differentiation over batched row-major matrices, dense MLP
//! layers, and the Adam optimiser with an exponential learning-rate decay.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{AdamConfig, LrSchedule, OptimizerState};
pub use mlp::{mlp_forward, MlpParams, MlpSpec, MlpTrace, OutputActivation};
pub use params::{Gradients, ParamGroup, ParamId, ParamStore};
pub use tape::{BackwardCtx, CustomOp, Tape, Var};
