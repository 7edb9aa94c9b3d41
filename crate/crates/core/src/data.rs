//! CIFAR-10 binary ingestion, per-channel normalization and a synthetic
//! labeled-image generator.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIZE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
pub const RECORD_BYTES: usize = 1 + CIFAR_CHANNELS * CIFAR_SIZE * CIFAR_SIZE;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

const SYNTH_NOISE: f32 = 0.08;

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub channel_mean: Vec<f32>,
    pub channel_std: Vec<f32>,
}

impl Dataset {
    /// Builds a dataset and computes its per-channel statistics.
    pub fn from_images(images: Vec<LabeledImage>) -> Result<Self> {
        let (channel_mean, channel_std) = channel_stats(&images)?;
        Ok(Self {
            images,
            channel_mean,
            channel_std,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> usize {
        self.images.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    pub fn image_dims(&self) -> Option<&[usize]> {
        self.images.first().map(|s| s.image.dims())
    }

    /// Replaces the normalization statistics, e.g. with those of a train split.
    pub fn with_stats(mut self, mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config("channel std must be positive".into()));
        }
        self.channel_mean = mean;
        self.channel_std = std;
        Ok(self)
    }

    /// Normalized images stacked into B×C×H×W, with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images: Vec<Tensor> = indices
            .iter()
            .map(|&i| normalize(self, &self.images[i].image))
            .collect::<Result<_>>()?;
        let labels = indices.iter().map(|&i| self.images[i].label).collect();
        Ok((stack(&images)?, labels))
    }
}

/// Stacks equally shaped C×H×W tensors into one B×C×H×W tensor.
pub fn stack(images: &[Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let dims = first.dims().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.dims() != dims.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "stack",
                lhs: dims,
                rhs: img.dims().to_vec(),
            });
        }
        data.extend_from_slice(img.data());
    }
    let mut out_dims = vec![images.len()];
    out_dims.extend_from_slice(&dims);
    Tensor::new(data, &out_dims)
}

fn channel_stats(images: &[LabeledImage]) -> Result<(Vec<f32>, Vec<f32>)> {
    let Some(first) = images.first() else {
        return Ok((vec![0.0; CIFAR_CHANNELS], vec![1.0; CIFAR_CHANNELS]));
    };
    let c = first.image.dims()[0];
    let plane = first.image.numel() / c;
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    for s in images {
        if s.image.dims() != first.image.dims() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: first.image.dims().to_vec(),
                rhs: s.image.dims().to_vec(),
            });
        }
        for (ch, values) in s.image.data().chunks_exact(plane).enumerate() {
            for &v in values {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let n = (images.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let s = (q / n - m * m).max(0.0).sqrt() as f32;
            // A constant channel would divide by zero; leave it unscaled.
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean.into_iter().map(|m| m as f32).collect(), std))
}

/// Parses one CIFAR-10 binary file: records of a label byte followed by
/// the R, G and B planes, each 32×32 row-major.
pub fn load_cifar10_bin(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::DatasetMissing(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    Dataset::from_images(parse_records(&bytes, path)?)
}

/// Parses an in-memory buffer of CIFAR-10 records.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: RECORD_BYTES,
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| decode_record(rec, i))
        .collect()
}

fn decode_record(rec: &[u8], index: usize) -> Result<LabeledImage> {
    let label = rec[0];
    if label as usize >= CIFAR_CLASSES {
        return Err(Error::InvalidLabel {
            label,
            record: index,
        });
    }
    let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(LabeledImage {
        image: Tensor::new(data, &[CIFAR_CHANNELS, CIFAR_SIZE, CIFAR_SIZE])?,
        label: label as usize,
    })
}

/// Inverse of the loader for one record.
pub fn encode_record(sample: &LabeledImage) -> Result<Vec<u8>> {
    if sample.image.dims() != [CIFAR_CHANNELS, CIFAR_SIZE, CIFAR_SIZE] {
        return Err(Error::ShapeMismatch {
            op: "encode_record",
            lhs: vec![CIFAR_CHANNELS, CIFAR_SIZE, CIFAR_SIZE],
            rhs: sample.image.dims().to_vec(),
        });
    }
    if sample.label >= CIFAR_CLASSES {
        return Err(Error::InvalidLabel {
            label: sample.label.min(255) as u8,
            record: 0,
        });
    }
    let mut out = Vec::with_capacity(RECORD_BYTES);
    out.push(sample.label as u8);
    out.extend(
        sample
            .image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Loads the five train batches or the test batch from a CIFAR-10 binary
/// directory.
pub fn load_cifar10_dir(dir: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<PathBuf> = if train {
        TRAIN_FILES.iter().map(|f| dir.join(f)).collect()
    } else {
        vec![dir.join(TEST_FILE)]
    };
    let mut images = Vec::new();
    for f in &files {
        if !f.exists() {
            return Err(Error::DatasetMissing(f.clone()));
        }
        images.extend(parse_records(&std::fs::read(f)?, f)?);
    }
    Dataset::from_images(images)
}

/// `(pixel − mean_c) / std_c` per channel.
pub fn normalize(ds: &Dataset, image: &Tensor) -> Result<Tensor> {
    let c = image.dims().first().copied().unwrap_or(0);
    if image.dims().len() != 3 || c != ds.channel_mean.len() || c != ds.channel_std.len() {
        return Err(Error::ShapeMismatch {
            op: "normalize",
            lhs: vec![ds.channel_mean.len()],
            rhs: image.dims().to_vec(),
        });
    }
    let plane = image.numel() / c;
    let data = image
        .data()
        .chunks_exact(plane)
        .enumerate()
        .flat_map(|(ch, values)| {
            let (m, s) = (ds.channel_mean[ch], ds.channel_std[ch]);
            values.iter().map(move |&v| (v - m) / s)
        })
        .collect();
    Tensor::new(data, image.dims())
}

/// CIFAR-shaped synthetic data.
pub fn synthetic_dataset(n: usize, n_classes: usize, seed: u64) -> Result<Dataset> {
    synthetic_dataset_sized(n, n_classes, CIFAR_SIZE, seed)
}

/// Class `c` is an oriented sinusoidal grating whose frequencies and
/// per-channel phases depend on `c`, plus seeded Gaussian noise. Labels cycle
/// through `0..n_classes`.
pub fn synthetic_dataset_sized(
    n: usize,
    n_classes: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || n_classes == 0 || size == 0 {
        return Err(Error::Config(
            "synthetic dataset needs n, n_classes and size ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f32::consts::TAU;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % n_classes;
        let fx = (1 + label % 4) as f32;
        let fy = ((label / 4) % 4) as f32;
        let shift = label as f32 / n_classes as f32;
        let mut data = Vec::with_capacity(CIFAR_CHANNELS * size * size);
        for ch in 0..CIFAR_CHANNELS {
            let phase = tau * shift * (ch + 1) as f32;
            for y in 0..size {
                for x in 0..size {
                    let t = tau * (fx * x as f32 + fy * y as f32) / size as f32 + phase;
                    let noise: f32 = StandardNormal.sample(&mut rng);
                    data.push((0.5 + 0.35 * t.sin() + SYNTH_NOISE * noise).clamp(0.0, 1.0));
                }
            }
        }
        images.push(LabeledImage {
            image: Tensor::new(data, &[CIFAR_CHANNELS, size, size])?,
            label,
        });
    }
    Dataset::from_images(images)
}
