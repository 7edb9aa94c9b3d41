//! Reduced RandAugment: geometric and photometric ops only, no histogram
//! based ops.

use rand::Rng;

use super::image::{chw, sample_bilinear};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_MAGNITUDE: u32 = 10;
const MAX_TRANSLATE: f32 = 0.45;
const MAX_ROTATE_DEG: f32 = 30.0;
const MAX_SHEAR: f32 = 0.3;
const MAX_ENHANCE: f32 = 0.9;
const MAX_POSTERIZE_DROP: f32 = 4.0;
const FILL: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandOp {
    TranslateX,
    TranslateY,
    Rotate,
    ShearX,
    ShearY,
    Brightness,
    Contrast,
    Posterize,
    Solarize,
}

impl RandOp {
    pub const ALL: [RandOp; 9] = [
        RandOp::TranslateX,
        RandOp::TranslateY,
        RandOp::Rotate,
        RandOp::ShearX,
        RandOp::ShearY,
        RandOp::Brightness,
        RandOp::Contrast,
        RandOp::Posterize,
        RandOp::Solarize,
    ];

    /// Applies the op at `level` in [0, 1] with the given direction.
    pub fn apply(self, x: &Tensor, level: f32, negate: bool) -> Result<Tensor> {
        let sign = if negate { -1.0 } else { 1.0 };
        let (c, h, w) = chw(x, "rand_augment")?;
        let data = match self {
            RandOp::TranslateX => {
                let t = sign * level * MAX_TRANSLATE * w as f32;
                affine(x, [1.0, 0.0, -t, 0.0, 1.0, 0.0])
            }
            RandOp::TranslateY => {
                let t = sign * level * MAX_TRANSLATE * h as f32;
                affine(x, [1.0, 0.0, 0.0, 0.0, 1.0, -t])
            }
            RandOp::Rotate => {
                let theta = (sign * level * MAX_ROTATE_DEG).to_radians();
                let (s, co) = theta.sin_cos();
                affine(x, [co, s, 0.0, -s, co, 0.0])
            }
            RandOp::ShearX => affine(x, [1.0, sign * level * MAX_SHEAR, 0.0, 0.0, 1.0, 0.0]),
            RandOp::ShearY => affine(x, [1.0, 0.0, 0.0, sign * level * MAX_SHEAR, 1.0, 0.0]),
            RandOp::Brightness => {
                let f = 1.0 + sign * level * MAX_ENHANCE;
                x.data().iter().map(|v| v * f).collect()
            }
            RandOp::Contrast => {
                let f = 1.0 + sign * level * MAX_ENHANCE;
                let plane = h * w;
                // Mean grey level over all channels and pixels.
                let mean =
                    x.data().iter().map(|&v| v as f64).sum::<f64>() as f32 / (c * plane) as f32;
                x.data().iter().map(|&v| mean + f * (v - mean)).collect()
            }
            RandOp::Posterize => {
                let drop = (level * MAX_POSTERIZE_DROP).round() as u32;
                if drop == 0 {
                    x.to_vec()
                } else {
                    let mask = !((1u32 << drop) - 1);
                    x.data()
                        .iter()
                        .map(|&v| {
                            (((v.clamp(0.0, 1.0) * 255.0).round() as u32) & mask) as f32 / 255.0
                        })
                        .collect()
                }
            }
            RandOp::Solarize => {
                let threshold = 1.0 - level;
                x.data()
                    .iter()
                    .map(|&v| if v > threshold { 1.0 - v } else { v })
                    .collect()
            }
        };
        let clamped = data.into_iter().map(|v: f32| v.clamp(0.0, 1.0)).collect();
        Tensor::new(clamped, x.dims())
    }
}

/// Resamples every channel through an inverse affine map about the image
/// centre: `src = A·(dst − centre) + centre + t` with `A = [a b; d e]`,
/// `t = (c, f)`.
fn affine(x: &Tensor, m: [f32; 6]) -> Vec<f32> {
    let (c, h, w) = match x.dims() {
        &[c, h, w] => (c, h, w),
        _ => unreachable!("checked by caller"),
    };
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(x.numel());
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let dy = y as f32 - cy;
            for xx in 0..w {
                let dx = xx as f32 - cx;
                let sx = m[0] * dx + m[1] * dy + cx + m[2];
                let sy = m[3] * dx + m[4] * dy + cy + m[5];
                out.push(sample_bilinear(plane, h, w, sy, sx, FILL));
            }
        }
    }
    out
}

/// Applies `n` ops drawn uniformly with replacement, each at magnitude
/// `m / 10` with a random direction. Output is clamped to `[0, 1]`.
pub fn rand_augment_lite<R: Rng + ?Sized>(
    x: &Tensor,
    n: usize,
    m: u32,
    rng: &mut R,
) -> Result<Tensor> {
    if m > MAX_MAGNITUDE {
        return Err(Error::OutOfRange {
            op: "rand_augment_lite",
            value: m as f64,
            range: "[0, 10]".into(),
        });
    }
    chw(x, "rand_augment_lite")?;
    let level = m as f32 / MAX_MAGNITUDE as f32;
    let mut img = x.clone();
    for _ in 0..n {
        let op = RandOp::ALL[rng.random_range(0..RandOp::ALL.len())];
        let negate = rng.random::<bool>();
        img = op.apply(&img, level, negate)?;
    }
    Ok(img)
}
