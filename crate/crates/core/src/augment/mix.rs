use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::image::{chw, Region};
use super::AugmentConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LABEL_TOLERANCE: f32 = 1e-5;

/// Probability distribution over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel(Vec<f32>);

impl SoftLabel {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        let sum: f32 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|&p| p < 0.0 || !p.is_finite())
            || (sum - 1.0).abs() > LABEL_TOLERANCE
        {
            return Err(Error::InvalidTarget { row: 0, sum });
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::OutOfRange {
                op: "one_hot",
                value: class as f64,
                range: format!("[0, {num_classes})"),
            });
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f32] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// `lambda·self + (1 − lambda)·other`.
    pub fn mix(&self, other: &SoftLabel, lambda: f32) -> Result<SoftLabel> {
        if self.0.len() != other.0.len() {
            return Err(Error::ShapeMismatch {
                op: "soft label mix",
                lhs: vec![self.0.len()],
                rhs: vec![other.0.len()],
            });
        }
        Ok(SoftLabel(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        ))
    }
}

fn check_lambda(op: &'static str, lambda: f32) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            op,
            value: lambda as f64,
            range: "[0, 1]".into(),
        })
    }
}

/// Convex combination of two images and their labels.
pub fn mixup(
    x1: &Tensor,
    x2: &Tensor,
    y1: &SoftLabel,
    y2: &SoftLabel,
    lambda: f32,
) -> Result<(Tensor, SoftLabel)> {
    check_lambda("mixup", lambda)?;
    if x1.dims() != x2.dims() {
        return Err(Error::ShapeMismatch {
            op: "mixup",
            lhs: x1.dims().to_vec(),
            rhs: x2.dims().to_vec(),
        });
    }
    let data = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok((Tensor::new(data, x1.dims())?, y1.mix(y2, lambda)?))
}

/// Pastes `region` of `x2` into `x1`; the label weight of `y1` becomes the
/// fraction of `x1` left visible.
pub fn cutmix_region(
    x1: &Tensor,
    x2: &Tensor,
    y1: &SoftLabel,
    y2: &SoftLabel,
    region: Region,
) -> Result<(Tensor, SoftLabel, f32)> {
    let (c, h, w) = chw(x1, "cutmix")?;
    if x1.dims() != x2.dims() {
        return Err(Error::ShapeMismatch {
            op: "cutmix",
            lhs: x1.dims().to_vec(),
            rhs: x2.dims().to_vec(),
        });
    }
    if region.top + region.height > h || region.left + region.width > w {
        return Err(Error::Config(format!(
            "cutmix region {region:?} outside {h}x{w}"
        )));
    }
    let mut data = x1.to_vec();
    for ch in 0..c {
        for y in region.top..region.top + region.height {
            let row = (ch * h + y) * w;
            data[row + region.left..row + region.left + region.width]
                .copy_from_slice(&x2.data()[row + region.left..row + region.left + region.width]);
        }
    }
    let lambda = 1.0 - region.area() as f32 / (h * w) as f32;
    Ok((Tensor::new(data, x1.dims())?, y1.mix(y2, lambda)?, lambda))
}

/// Box covering `1 − lambda` of the area around a uniform centre, clipped
/// to the image.
fn cut_box<R: Rng + ?Sized>(h: usize, w: usize, lambda: f32, rng: &mut R) -> Region {
    let ratio = (1.0 - lambda).sqrt();
    let (cut_h, cut_w) = ((h as f32 * ratio) as usize, (w as f32 * ratio) as usize);
    let cy = rng.random_range(0..h) as isize;
    let cx = rng.random_range(0..w) as isize;
    let clip = |v: isize, len: usize| v.clamp(0, len as isize) as usize;
    let (y0, y1) = (
        clip(cy - (cut_h / 2) as isize, h),
        clip(cy + (cut_h / 2) as isize, h),
    );
    let (x0, x1) = (
        clip(cx - (cut_w / 2) as isize, w),
        clip(cx + (cut_w / 2) as isize, w),
    );
    Region {
        top: y0,
        left: x0,
        height: y1 - y0,
        width: x1 - x0,
    }
}

/// CutMix with a box of area ratio `1 − lambda_raw` at a random centre.
/// Returns the mixed image, mixed label and the area-adjusted lambda.
pub fn cutmix<R: Rng + ?Sized>(
    x1: &Tensor,
    x2: &Tensor,
    y1: &SoftLabel,
    y2: &SoftLabel,
    lambda_raw: f32,
    rng: &mut R,
) -> Result<(Tensor, SoftLabel, f32)> {
    check_lambda("cutmix", lambda_raw)?;
    let (_, h, w) = chw(x1, "cutmix")?;
    let region = cut_box(h, w, lambda_raw, rng);
    cutmix_region(x1, x2, y1, y2, region)
}

/// Batch-level mixing: a coin flip picks mixup or CutMix (when both are
/// enabled), one lambda ~ Beta(α, α) is drawn for the batch, and sample `i`
/// is mixed with sample `B − 1 − i`.
pub fn mix_batch<R: Rng + ?Sized>(
    images: &[Tensor],
    labels: &[SoftLabel],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<Tensor>, Vec<SoftLabel>)> {
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "mix_batch",
            lhs: vec![images.len()],
            rhs: vec![labels.len()],
        });
    }
    let use_mixup = cfg.enable_mixup && cfg.mixup_alpha > 0.0;
    let use_cutmix = cfg.enable_cutmix && cfg.cutmix_alpha > 0.0;
    if !(use_mixup || use_cutmix) || images.is_empty() {
        return Ok((images.to_vec(), labels.to_vec()));
    }
    let pick_cutmix = match (use_mixup, use_cutmix) {
        (true, true) => rng.random::<bool>(),
        (false, true) => true,
        _ => false,
    };
    let alpha = if pick_cutmix {
        cfg.cutmix_alpha
    } else {
        cfg.mixup_alpha
    };
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    let lambda = beta.sample(rng).clamp(0.0, 1.0);
    let n = images.len();
    if pick_cutmix {
        let (_, h, w) = chw(&images[0], "mix_batch")?;
        let region = cut_box(h, w, lambda, rng);
        let mut out_x = Vec::with_capacity(n);
        let mut out_y = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y, _) = cutmix_region(
                &images[i],
                &images[n - 1 - i],
                &labels[i],
                &labels[n - 1 - i],
                region,
            )?;
            out_x.push(x);
            out_y.push(y);
        }
        Ok((out_x, out_y))
    } else {
        (0..n)
            .map(|i| {
                mixup(
                    &images[i],
                    &images[n - 1 - i],
                    &labels[i],
                    &labels[n - 1 - i],
                    lambda,
                )
            })
            .collect::<Result<Vec<_>>>()
            .map(|pairs| pairs.into_iter().unzip())
    }
}
