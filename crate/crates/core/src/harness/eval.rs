//! Top-1 evaluation.

use std::path::Path;

use super::checkpoint::Checkpoint;
use super::config::{DataSource, RunConfig};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::ConvMixerModel;

pub const EVAL_BATCH: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub count: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of one row of logits against a hard label, in f64.
fn hard_ce(row: &[f32], label: usize) -> f64 {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let lse = row
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    lse - row[label] as f64
}

/// Eval-mode accuracy and mean loss of `model` on `ds`, normalized with the
/// dataset's channel statistics.
pub fn evaluate(model: &ConvMixerModel, ds: &Dataset, batch_size: usize) -> Result<EvalResult> {
    let classes = model.config().num_classes;
    if ds.num_classes() > classes {
        return Err(Error::ShapeMismatch {
            op: "evaluate: model classes vs dataset labels",
            lhs: vec![classes],
            rhs: vec![ds.num_classes()],
        });
    }
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let mut correct = 0usize;
    let mut loss = 0f64;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = ds.batch(chunk)?;
        let logits = model.predict(&x)?;
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels) {
            if argmax(row) == label {
                correct += 1;
            }
            loss += hard_ce(row, label);
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / ds.len() as f64,
        mean_loss: loss / ds.len() as f64,
        count: ds.len(),
    })
}

/// Train and test splits for a run, both normalized with the train split's
/// statistics (or those recorded in the config).
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.data {
        DataSource::Cifar10 { dir } => (
            data::load_cifar10_dir(dir, true)?,
            data::load_cifar10_dir(dir, false)?,
        ),
        DataSource::Synthetic { train, test, size } => {
            let classes = cfg.model.num_classes;
            let tr = data::synthetic_dataset_sized(*train, classes, *size, cfg.seed)?;
            let te = if *test == 0 {
                Dataset::from_images(Vec::new())?
            } else {
                data::synthetic_dataset_sized(*test, classes, *size, cfg.seed.wrapping_add(1))?
            };
            (tr, te)
        }
    };
    let (mean, std) = match &cfg.normalization {
        Some((m, s)) => (m.clone(), s.clone()),
        None => (train.channel_mean.clone(), train.channel_std.clone()),
    };
    Ok((
        train.with_stats(mean.clone(), std.clone())?,
        test.with_stats(mean, std)?,
    ))
}

/// Which data `cmd_eval` should score.
pub enum EvalData<'a> {
    /// A CIFAR-10 binary directory (test split) or a single batch file.
    Path(&'a Path),
    /// The run's own train or test split, regenerated from its config.
    Split { train: bool },
}

pub fn cmd_eval(ckpt: &Checkpoint, data: EvalData<'_>) -> Result<EvalResult> {
    let mut model = ckpt.to_model()?;
    model.set_mode(crate::nn::Mode::Eval);
    let cfg = &ckpt.config;
    let ds = match data {
        EvalData::Path(p) if p.is_dir() => data::load_cifar10_dir(p, false)?,
        EvalData::Path(p) => data::load_cifar10_bin(p)?,
        EvalData::Split { train } => {
            let (tr, te) = load_datasets(cfg)?;
            if train {
                tr
            } else {
                te
            }
        }
    };
    let ds = match &cfg.normalization {
        Some((m, s)) => ds.with_stats(m.clone(), s.clone())?,
        None => ds,
    };
    evaluate(&model, &ds, EVAL_BATCH)
}
