//! Minimal differentiable-network substrate: layers, reverse-mode
//! gradients, losses, and SGD with cosine annealing.

pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{ActKind, LayerSpec};
pub use loss::{cross_entropy, cw_margin, dlr, mae, softmax, LossKind};
pub use network::{instantiate, Gradients, Network, Tape};
pub use optim::{cosine_lr, sgd_step, OptimizerState};
