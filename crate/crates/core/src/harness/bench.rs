//! Forward-pass throughput.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ConvMixerModel, ModelConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub name: String,
    pub kernel_size: usize,
    pub patch_size: usize,
    pub images_per_sec: f64,
    pub mean_batch_secs: f64,
}

/// Values to sweep for the kernel and patch sizes; empty means "as
/// configured".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchGrid {
    pub kernel_sizes: Vec<usize>,
    pub patch_sizes: Vec<usize>,
}

/// Parses `k=3,9` and `p=7,14` items.
pub fn parse_grid<S: AsRef<str>>(items: &[S]) -> Result<BenchGrid> {
    let mut grid = BenchGrid::default();
    for item in items {
        let item = item.as_ref();
        let (key, values) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid item {item:?} is not key=v1,v2")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<usize>().ok().filter(|&v| v > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Config(format!("bad grid values in {item:?}")))?;
        match key.trim() {
            "k" | "kernel_size" => grid.kernel_sizes = values,
            "p" | "patch_size" => grid.patch_sizes = values,
            other => return Err(Error::Config(format!("unknown grid key {other:?}"))),
        }
    }
    Ok(grid)
}

/// Mean eval-mode forward throughput over `batches` timed batches, after
/// `warmup` untimed ones.
pub fn bench_model(
    cfg: &ModelConfig,
    input_size: usize,
    batch_size: usize,
    warmup: usize,
    batches: usize,
) -> Result<BenchResult> {
    if batches == 0 || batch_size == 0 {
        return Err(Error::Config(
            "bench needs at least one batch of one image".into(),
        ));
    }
    let model = ConvMixerModel::build(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dims = [batch_size, cfg.in_channels, input_size, input_size];
    let n: usize = dims.iter().product();
    let x = Tensor::new((0..n).map(|_| rng.random::<f32>()).collect(), &dims)?;
    for _ in 0..warmup {
        model.predict(&x)?;
    }
    let t0 = Instant::now();
    for _ in 0..batches {
        model.predict(&x)?;
    }
    let secs = t0.elapsed().as_secs_f64() / batches as f64;
    Ok(BenchResult {
        name: format!("{} p{} k{}", cfg.name(), cfg.patch_size, cfg.kernel_size),
        kernel_size: cfg.kernel_size,
        patch_size: cfg.patch_size,
        images_per_sec: batch_size as f64 / secs,
        mean_batch_secs: secs,
    })
}

/// Benchmarks every (k, p) combination of `grid` around `base`.
pub fn cmd_bench(
    base: &ModelConfig,
    grid: &BenchGrid,
    input_size: usize,
    batch_size: usize,
    warmup: usize,
    batches: usize,
) -> Result<Vec<BenchResult>> {
    let ks = if grid.kernel_sizes.is_empty() {
        vec![base.kernel_size]
    } else {
        grid.kernel_sizes.clone()
    };
    let ps = if grid.patch_sizes.is_empty() {
        vec![base.patch_size]
    } else {
        grid.patch_sizes.clone()
    };
    let mut out = Vec::new();
    for &p in &ps {
        for &k in &ks {
            let cfg = ModelConfig {
                kernel_size: k,
                patch_size: p,
                ..base.clone()
            };
            out.push(bench_model(&cfg, input_size, batch_size, warmup, batches)?);
        }
    }
    Ok(out)
}
