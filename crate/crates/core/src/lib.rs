//! ConvMixer built from scratch: tensors with reverse-mode autodiff, conv
//! and norm kernels, AdamW with a triangular schedule, augmentation, CIFAR-10
//! loading and the training harness behind the `convmixer` binary.

pub mod augment;
pub mod data;
pub mod error;
pub mod harness;
mod kernels;
pub mod model;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, Shape, Tensor};
