//! Run configuration, checkpoints, metrics and the command implementations
//! behind the `convmixer` binary.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod train;
pub mod viz;

pub use bench::{bench_model, cmd_bench, parse_grid, BenchGrid, BenchResult};
pub use checkpoint::{Checkpoint, TensorRecord, FORMAT_VERSION, MAGIC};
pub use config::{DataSource, RunConfig, DEFAULT_CLIP_NORM};
pub use eval::{argmax, cmd_eval, evaluate, load_datasets, EvalData, EvalResult};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use train::{cmd_train, cmd_train_with, TrainOptions, TrainOutcome, Trainer};
pub use viz::{cmd_viz, render, Raster, VizOutput, VizTarget};

use crate::model::{param_count, ModelConfig};

/// Closed-form parameter count for `h d p k c_in n_classes`.
pub fn cmd_params(h: usize, d: usize, p: usize, k: usize, c_in: usize, n_classes: usize) -> u64 {
    param_count(&ModelConfig::new(h, d, p, k, c_in, n_classes))
}
