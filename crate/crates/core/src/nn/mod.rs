//! Layer primitives ConvMixer is assembled from.

mod activation;
mod conv;
mod loss;
mod norm;
mod pool;

pub use activation::{activation, gelu_scalar, Activation};
pub use conv::{conv2d, conv2d_with, ConvAlgo, ConvSpec, Padding};
pub use loss::softmax_cross_entropy;
pub use norm::{
    batchnorm2d, batchnorm2d_apply, layernorm, BatchNormState, RunningUpdate, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
pub use pool::{global_avg_pool, linear};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
