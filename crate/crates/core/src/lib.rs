//! Adaptive loss-function learning.
//!
//! A small per-channel network acts as the training loss of a base model and
//! is itself updated online, one meta step per base step, by differentiating
//! through the base optimizer's update.

pub mod activations;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod lossnet;
pub mod metaloop;
pub mod models;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
