//! Minimal feedforward network engine: sequential layers, losses, Adam,
//! finite-difference gradient checks and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
mod layer;
pub mod loss;
mod network;
pub mod optim;

pub use layer::{LayerSpec, Mode, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM, ELU_ALPHA};
pub use loss::{anchored_mse_for, anchored_mse_loss, softmax_cross_entropy, softmax_rows, AnchoredLoss};
pub use network::{Backward, Gradients, Network};
pub use optim::{lr_schedule, Adam, AdamConfig};
