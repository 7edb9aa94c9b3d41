//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NormKind};
use crate::nn::Activation;
use crate::optim::{AdamWConfig, ScheduleConfig};

pub const DEFAULT_CLIP_NORM: f32 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Directory holding the CIFAR-10 binary batches.
    Cifar10 { dir: PathBuf },
    /// Generated gratings; `test` images use a different noise seed.
    Synthetic {
        train: usize,
        test: usize,
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub augment: AugmentConfig,
    pub clip_norm: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data: DataSource,
    pub output_dir: PathBuf,
    /// Per-channel mean and std of the training split, filled in by the
    /// trainer so evaluation normalizes the same way.
    pub normalization: Option<(Vec<f32>, Vec<f32>)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::new(128, 8, 1, 8, 3, 10),
            optim: AdamWConfig::default(),
            augment: AugmentConfig::default(),
            clip_norm: DEFAULT_CLIP_NORM,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            data: DataSource::Synthetic {
                train: 512,
                test: 128,
                size: 32,
            },
            output_dir: PathBuf::from("runs"),
            normalization: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f32>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[f32]) -> String {
    values
        .iter()
        .map(f32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.augment.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        let min_batch = if self.model.norm == NormKind::BatchNorm {
            2
        } else {
            1
        };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch_size must be >= {min_batch} with {}",
                self.model.norm
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if let Some((mean, std)) = &self.normalization {
            if mean.len() != self.model.in_channels
                || std.len() != self.model.in_channels
                || std.iter().any(|&s| s.is_nan() || s <= 0.0)
            {
                return Err(Error::Config(
                    "channel stats must have one positive std per input channel".into(),
                ));
            }
        }
        if let DataSource::Synthetic { train, size, .. } = self.data {
            if train == 0 || size == 0 {
                return Err(Error::Config(
                    "synthetic_train and image_size must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Triangular schedule over the whole run.
    pub fn schedule(&self, steps_per_epoch: usize) -> ScheduleConfig {
        ScheduleConfig::from_epochs(
            self.epochs as u64,
            steps_per_epoch as u64,
            self.optim.lr_peak,
        )
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// missing keys keep their defaults, unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut augment_seed = None;
        let (mut mean, mut std) = (None, None);
        let mut dataset = String::from("synthetic");
        let mut data_dir = PathBuf::from("data/cifar-10-batches-bin");
        let (mut syn_train, mut syn_test, mut size) = match cfg.data {
            DataSource::Synthetic { train, test, size } => (train, test, size),
            DataSource::Cifar10 { .. } => unreachable!(),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let m = &mut cfg.model;
            let o = &mut cfg.optim;
            let a = &mut cfg.augment;
            match key {
                "hidden" => m.hidden = parse(key, value)?,
                "depth" => m.depth = parse(key, value)?,
                "patch_size" => m.patch_size = parse(key, value)?,
                "kernel_size" => m.kernel_size = parse(key, value)?,
                "in_channels" => m.in_channels = parse(key, value)?,
                "num_classes" => m.num_classes = parse(key, value)?,
                "activation" => m.activation = parse::<Activation>(key, value)?,
                "norm" => m.norm = parse::<NormKind>(key, value)?,
                "residual_depthwise" => m.residual_depthwise = parse_bool(key, value)?,
                "residual_pointwise" => m.residual_pointwise = parse_bool(key, value)?,
                "lr_peak" => o.lr_peak = parse(key, value)?,
                "beta1" => o.beta1 = parse(key, value)?,
                "beta2" => o.beta2 = parse(key, value)?,
                "adam_eps" => o.eps = parse(key, value)?,
                "weight_decay" => o.weight_decay = parse(key, value)?,
                "decay_norm_and_bias" => o.decay_norm_and_bias = parse_bool(key, value)?,
                "clip_norm" => cfg.clip_norm = parse(key, value)?,
                "mixup_alpha" => a.mixup_alpha = parse(key, value)?,
                "cutmix_alpha" => a.cutmix_alpha = parse(key, value)?,
                "erase_prob" => a.erase_prob = parse(key, value)?,
                "randaug_n" => a.randaug_n = parse(key, value)?,
                "randaug_m" => a.randaug_m = parse(key, value)?,
                "crop_scale_min" => a.crop_scale.0 = parse(key, value)?,
                "crop_scale_max" => a.crop_scale.1 = parse(key, value)?,
                "flip_prob" => a.flip_prob = parse(key, value)?,
                "mixup" => a.enable_mixup = parse_bool(key, value)?,
                "cutmix" => a.enable_cutmix = parse_bool(key, value)?,
                "random_erase" => a.enable_erase = parse_bool(key, value)?,
                "randaug" => a.enable_randaug = parse_bool(key, value)?,
                "random_crop" => a.enable_crop = parse_bool(key, value)?,
                "augment" => {
                    if !parse_bool(key, value)? {
                        *a = AugmentConfig {
                            rng_seed: a.rng_seed,
                            ..AugmentConfig::disabled()
                        };
                    }
                }
                "augment_seed" => augment_seed = Some(parse(key, value)?),
                "batch_size" => cfg.batch_size = parse(key, value)?,
                "epochs" => cfg.epochs = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "dataset" => dataset = value.to_ascii_lowercase(),
                "data_dir" => data_dir = PathBuf::from(value),
                "synthetic_train" => syn_train = parse(key, value)?,
                "synthetic_test" => syn_test = parse(key, value)?,
                "image_size" => size = parse(key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "channel_mean" => mean = Some(parse_list(key, value)?),
                "channel_std" => std = Some(parse_list(key, value)?),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.augment.rng_seed = augment_seed.unwrap_or(cfg.seed);
        cfg.normalization = match (mean, std) {
            (None, None) => None,
            (Some(m), Some(s)) => Some((m, s)),
            _ => {
                return Err(Error::Config(
                    "channel_mean and channel_std go together".into(),
                ))
            }
        };
        cfg.data = match dataset.as_str() {
            "cifar10" | "cifar-10" => DataSource::Cifar10 { dir: data_dir },
            "synthetic" => DataSource::Synthetic {
                train: syn_train,
                test: syn_test,
                size,
            },
            other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let o = &self.optim;
        let a = &self.augment;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("hidden", m.hidden.to_string());
        put("depth", m.depth.to_string());
        put("patch_size", m.patch_size.to_string());
        put("kernel_size", m.kernel_size.to_string());
        put("in_channels", m.in_channels.to_string());
        put("num_classes", m.num_classes.to_string());
        put("activation", m.activation.to_string());
        put("norm", m.norm.to_string());
        put("residual_depthwise", m.residual_depthwise.to_string());
        put("residual_pointwise", m.residual_pointwise.to_string());
        put("lr_peak", o.lr_peak.to_string());
        put("beta1", o.beta1.to_string());
        put("beta2", o.beta2.to_string());
        put("adam_eps", o.eps.to_string());
        put("weight_decay", o.weight_decay.to_string());
        put("decay_norm_and_bias", o.decay_norm_and_bias.to_string());
        put("clip_norm", self.clip_norm.to_string());
        put("mixup_alpha", a.mixup_alpha.to_string());
        put("cutmix_alpha", a.cutmix_alpha.to_string());
        put("erase_prob", a.erase_prob.to_string());
        put("randaug_n", a.randaug_n.to_string());
        put("randaug_m", a.randaug_m.to_string());
        put("crop_scale_min", a.crop_scale.0.to_string());
        put("crop_scale_max", a.crop_scale.1.to_string());
        put("flip_prob", a.flip_prob.to_string());
        put("mixup", a.enable_mixup.to_string());
        put("cutmix", a.enable_cutmix.to_string());
        put("random_erase", a.enable_erase.to_string());
        put("randaug", a.enable_randaug.to_string());
        put("random_crop", a.enable_crop.to_string());
        put("augment_seed", a.rng_seed.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        match &self.data {
            DataSource::Cifar10 { dir } => {
                put("dataset", "cifar10".into());
                put("data_dir", dir.display().to_string());
            }
            DataSource::Synthetic { train, test, size } => {
                put("dataset", "synthetic".into());
                put("synthetic_train", train.to_string());
                put("synthetic_test", test.to_string());
                put("image_size", size.to_string());
            }
        }
        put("output_dir", self.output_dir.display().to_string());
        if let Some((mean, std)) = &self.normalization {
            put("channel_mean", join(mean));
            put("channel_std", join(std));
        }
        s
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
