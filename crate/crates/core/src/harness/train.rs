//! The training loop: augment → forward → softmax CE → backward → clip →
//! schedule → AdamW, one metrics record per epoch.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{argmax, evaluate, load_datasets, EVAL_BATCH};
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::augment::{augment_sample, mix_batch, random_erase, SoftLabel};
use crate::data::{normalize, stack, Dataset};
use crate::error::{Error, Result};
use crate::model::ConvMixerModel;
use crate::nn::{softmax_cross_entropy, Mode};
use crate::optim::{adamw_step, clip_grad_global_norm, lr_at, OptimizerState, ScheduleConfig};
use crate::tensor::Tensor;

pub const FINAL_CHECKPOINT: &str = "final.cmix";
pub const LAST_CHECKPOINT: &str = "last.cmix";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub struct Trainer {
    config: RunConfig,
    model: ConvMixerModel,
    optimizer: OptimizerState,
    step: u64,
    epoch: u64,
    train: Dataset,
    test: Dataset,
    steps_per_epoch: usize,
    schedule: ScheduleConfig,
}

/// Summary of one optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f32,
    pub correct: usize,
    pub grad_norm: f32,
    pub lr: f32,
}

impl Trainer {
    /// Loads the configured data and builds a fresh model.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = load_datasets(config)?;
        Self::with_data(config, train, test)
    }

    /// Fresh run on caller-supplied splits (already carrying their
    /// normalization statistics).
    pub fn with_data(config: &RunConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let steps_per_epoch = train.len() / config.batch_size;
        if steps_per_epoch == 0 {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training images",
                config.batch_size,
                train.len()
            )));
        }
        let mut config = config.clone();
        config.normalization = Some((train.channel_mean.clone(), train.channel_std.clone()));
        let model = ConvMixerModel::build(&config.model, config.seed)?;
        let schedule = config.schedule(steps_per_epoch);
        Ok(Self {
            config,
            model,
            optimizer: OptimizerState::default(),
            step: 0,
            epoch: 0,
            train,
            test,
            steps_per_epoch,
            schedule,
        })
    }

    /// Continues from a checkpoint, which must carry optimizer state.
    pub fn resume(ckpt: &Checkpoint, train: Dataset, test: Dataset) -> Result<Self> {
        let mut t = Self::with_data(&ckpt.config, train, test)?;
        t.model = ckpt.to_model()?;
        t.optimizer = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("resume needs optimizer state".into()))?;
        t.step = ckpt.step;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &ConvMixerModel {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs as u64
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.config,
            &self.model,
            Some(&self.optimizer),
            self.step,
            self.epoch,
        )
    }

    /// Epoch-local generators: shuffling and augmentation draw from separate
    /// streams keyed by the epoch index, so a resumed run replays exactly.
    fn epoch_rngs(&self) -> (ChaCha8Rng, ChaCha8Rng) {
        let mut shuffle = ChaCha8Rng::seed_from_u64(self.config.seed);
        shuffle.set_stream(2 * self.epoch);
        let mut aug = ChaCha8Rng::seed_from_u64(self.config.augment.rng_seed);
        aug.set_stream(2 * self.epoch + 1);
        (shuffle, aug)
    }

    fn prepare_batch(
        &self,
        indices: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tensor, Vec<usize>)> {
        let aug = &self.config.augment;
        let classes = self.config.model.num_classes;
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut hard = Vec::with_capacity(indices.len());
        for &i in indices {
            let sample = &self.train.images[i];
            let mut img = sample.image.clone();
            if aug.enable_crop || aug.enable_randaug {
                img = augment_sample(&img, img.dims()[1], aug, rng)?;
            }
            img = normalize(&self.train, &img)?;
            if aug.enable_erase {
                img = random_erase(&img, aug, rng)?;
            }
            images.push(img);
            labels.push(SoftLabel::one_hot(sample.label, classes)?);
            hard.push(sample.label);
        }
        if aug.mixing_enabled() {
            (images, labels) = mix_batch(&images, &labels, aug, rng)?;
        }
        let targets: Vec<f32> = labels
            .iter()
            .flat_map(|l| l.probs().iter().copied())
            .collect();
        Ok((
            stack(&images)?,
            Tensor::new(targets, &[indices.len(), classes])?,
            hard,
        ))
    }

    /// One optimizer step on the given batch.
    pub fn train_step(
        &mut self,
        x: &Tensor,
        targets: &Tensor,
        labels: &[usize],
    ) -> Result<StepStats> {
        self.model.set_mode(Mode::Train);
        let logits = self.model.forward(x)?;
        let loss = softmax_cross_entropy(&logits, targets)?;
        let loss_value = loss.item().unwrap_or(f32::NAN);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(
                "training loss; lower lr_peak or check the input data",
            ));
        }
        let classes = self.config.model.num_classes;
        let correct = logits
            .data()
            .chunks_exact(classes)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        loss.backward()?;
        let params = self.model.named_parameters();
        let mut grads: Vec<Vec<f32>> = params
            .iter()
            .map(|(_, t)| t.take_grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let grad_norm = clip_grad_global_norm(&mut grads, self.config.clip_norm);
        let lr = lr_at(self.step + 1, &self.schedule)?;
        let mut tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let mut refs: Vec<&mut Tensor> = tensors.iter_mut().collect();
        adamw_step(
            &mut refs,
            &grads,
            &mut self.optimizer,
            &self.config.optim,
            lr,
        )?;
        for ((name, _), t) in params.iter().zip(tensors) {
            self.model.set_tensor(name, t)?;
        }
        self.step += 1;
        Ok(StepStats {
            loss: loss_value,
            correct,
            grad_norm,
            lr,
        })
    }

    /// Runs one full epoch. Returns `None` if `stop` was raised mid-epoch, in
    /// which case the trainer state is left mid-epoch and should be
    /// discarded.
    pub fn run_epoch(
        &mut self,
        stop: Option<&AtomicBool>,
        started: Instant,
    ) -> Result<Option<MetricsRecord>> {
        let t0 = Instant::now();
        let (mut shuffle, mut aug_rng) = self.epoch_rngs();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut shuffle);
        let bs = self.config.batch_size;
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        let mut lr = 0.0;
        for batch in order.chunks_exact(bs) {
            if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                return Ok(None);
            }
            let (x, y, labels) = self.prepare_batch(batch, &mut aug_rng)?;
            let stats = self.train_step(&x, &y, &labels)?;
            loss_sum += stats.loss as f64;
            correct += stats.correct;
            lr = stats.lr;
        }
        self.epoch += 1;
        let seen = self.steps_per_epoch * bs;
        let test_acc = if self.test.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, &self.test, EVAL_BATCH)?.accuracy)
        };
        let elapsed = t0.elapsed().as_secs_f64();
        Ok(Some(MetricsRecord {
            epoch: self.epoch,
            step: self.step,
            train_loss: loss_sum / self.steps_per_epoch as f64,
            train_acc: correct as f64 / seen as f64,
            test_acc,
            lr,
            wall_time: started.elapsed().as_secs_f64(),
            images_per_sec: seen as f64 / elapsed.max(1e-9),
        }))
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    /// Where the checkpoint was written.
    pub checkpoint_path: PathBuf,
    pub interrupted: bool,
}

/// Options for [`cmd_train_with`].
#[derive(Default)]
pub struct TrainOptions {
    pub resume: Option<Checkpoint>,
    /// Raised by a signal handler; training stops before the next batch.
    pub stop: Option<Arc<AtomicBool>>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    cmd_train_with(config, TrainOptions::default())
}

/// Trains to completion, appending to `metrics.jsonl` and writing
/// `final.cmix` in the output directory. On interrupt, writes `last.cmix`
/// holding the state at the most recent epoch boundary.
pub fn cmd_train_with(config: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    let mut trainer = match &opts.resume {
        Some(ck) => {
            let (train, test) = load_datasets(&ck.config)?;
            Trainer::resume(ck, train, test)?
        }
        None => Trainer::new(config)?,
    };
    let out_dir = trainer.config().output_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let mut writer = MetricsWriter::open(out_dir.join(METRICS_FILE), opts.resume.is_some())?;
    let started = Instant::now();
    let mut metrics = Vec::new();
    let mut boundary = trainer.checkpoint();
    while !trainer.is_done() {
        match trainer.run_epoch(opts.stop.as_deref(), started)? {
            Some(record) => {
                writer.write(&record)?;
                if opts.verbose {
                    eprintln!(
                        "epoch {} step {} loss {:.4} train_acc {:.4} test_acc {} lr {:.3e} {:.1} img/s",
                        record.epoch,
                        record.step,
                        record.train_loss,
                        record.train_acc,
                        record.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
                        record.lr,
                        record.images_per_sec
                    );
                }
                metrics.push(record);
                boundary = trainer.checkpoint();
            }
            None => {
                let path = out_dir.join(LAST_CHECKPOINT);
                boundary.save(&path)?;
                return Ok(TrainOutcome {
                    checkpoint: boundary,
                    metrics,
                    checkpoint_path: path,
                    interrupted: true,
                });
            }
        }
    }
    let path = out_dir.join(FINAL_CHECKPOINT);
    boundary.save(&path)?;
    Ok(TrainOutcome {
        checkpoint: boundary,
        metrics,
        checkpoint_path: path,
        interrupted: false,
    })
}
