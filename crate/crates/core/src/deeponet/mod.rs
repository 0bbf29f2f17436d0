//! Physics-informed DeepONet with modified-MLP branch and trunk networks.
//!
//! Input derivatives needed by the PDE residual are propagated forward as
//! second-order jets; parameter gradients are obtained by reverse
//! accumulation through the jet computation.

pub mod adam;
pub mod checkpoint;
pub mod jet;
pub mod loss;
pub mod network;
pub mod params;

pub use adam::{adam_step, AdamConfig, TrainState};
pub use jet::Jet2;
pub use loss::{grad_loss, loss_total, residual_at, Batch, LossBreakdown, LossWeights};
pub use network::{DeepONet, Scales};
pub use params::{init_glorot, ArchSpec, DeepONetParams, Dense, MlpShape, ModifiedMlp};
