//! Learnable velocity field at desk scale.
//!
//! A small two-branch convolutional net predicts the dehazing velocity and a
//! refined transmission map jointly, trained in three stages (pretrain,
//! reflow, distillation) on top of an in-repo reverse-mode autodiff engine
//! with finite-difference gradient verification.

pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod source;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, LossSelector};
pub use net::{NetConfig, ToyFlowNet};
pub use train::{distill, pretrain, reflow, Stage, TrainConfig};
