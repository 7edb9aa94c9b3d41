//! Training-time augmentation of single `C×H×W` images in `[0, 1]` and of
//! labelled batches.
//!
//! Every function draws randomness only from the RNG it is given, so a fixed
//! seed reproduces the output bit for bit.

mod crop;
mod erase;
mod image;
mod mix;
mod randaug;

pub use crop::{random_resized_crop_flip, resize_bilinear, CropParams};
pub use erase::{random_erase, random_erase_region};
pub use image::Region;
pub use mix::{cutmix, cutmix_region, mix_batch, mixup, SoftLabel};
pub use randaug::{rand_augment_lite, RandOp};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mixup_alpha: f32,
    pub cutmix_alpha: f32,
    pub erase_prob: f32,
    pub randaug_n: usize,
    /// Magnitude on the 0–10 scale.
    pub randaug_m: u32,
    pub crop_scale: (f32, f32),
    pub flip_prob: f32,
    pub enable_mixup: bool,
    pub enable_cutmix: bool,
    pub enable_erase: bool,
    pub enable_randaug: bool,
    /// Random resized crop ("random scaling") and horizontal flip.
    pub enable_crop: bool,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mixup_alpha: 0.2,
            cutmix_alpha: 1.0,
            erase_prob: 0.25,
            randaug_n: 2,
            randaug_m: 9,
            crop_scale: (0.35, 1.0),
            flip_prob: 0.5,
            enable_mixup: true,
            enable_cutmix: true,
            enable_erase: true,
            enable_randaug: true,
            enable_crop: true,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every technique switched off.
    pub fn disabled() -> Self {
        Self {
            enable_mixup: false,
            enable_cutmix: false,
            enable_erase: false,
            enable_randaug: false,
            enable_crop: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        let ok = prob(self.erase_prob)
            && prob(self.flip_prob)
            && self.mixup_alpha >= 0.0
            && self.cutmix_alpha >= 0.0
            && self.randaug_m <= 10
            && self.crop_scale.0 > 0.0
            && self.crop_scale.0 <= self.crop_scale.1
            && self.crop_scale.1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid augmentation settings {self:?}"
            )))
        }
    }

    pub fn mixing_enabled(&self) -> bool {
        (self.enable_mixup && self.mixup_alpha > 0.0)
            || (self.enable_cutmix && self.cutmix_alpha > 0.0)
    }
}

/// Per-sample geometric and photometric augmentation, before normalization:
/// random resized crop + flip, then RandAugment-lite, clamped to `[0, 1]`.
pub fn augment_sample<R: Rng + ?Sized>(
    x: &Tensor,
    out_size: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let mut img = if cfg.enable_crop {
        let params = CropParams {
            scale_range: cfg.crop_scale,
            flip_prob: cfg.flip_prob,
            ..CropParams::default()
        };
        random_resized_crop_flip(x, out_size, &params, rng)?
    } else {
        resize_bilinear(x, out_size)?
    };
    if cfg.enable_randaug && cfg.randaug_n > 0 {
        img = rand_augment_lite(&img, cfg.randaug_n, cfg.randaug_m, rng)?;
    }
    let clamped = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(clamped, img.dims())
}
