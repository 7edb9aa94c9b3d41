use rand::Rng;

use super::image::{chw, sample_bilinear, Region};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropParams {
    /// Range of the crop's area as a fraction of the image area.
    pub scale_range: (f32, f32),
    /// Range of width / height.
    pub ratio_range: (f32, f32),
    pub flip_prob: f32,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            scale_range: (0.08, 1.0),
            ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
        }
    }
}

const CROP_ATTEMPTS: usize = 10;

fn sample_crop<R: Rng + ?Sized>(h: usize, w: usize, p: &CropParams, rng: &mut R) -> Region {
    let area = (h * w) as f32;
    let (lr0, lr1) = (p.ratio_range.0.ln(), p.ratio_range.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * uniform(rng, p.scale_range.0, p.scale_range.1);
        let ratio = uniform(rng, lr0, lr1).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            return Region {
                top: rng.random_range(0..=h - ch),
                left: rng.random_range(0..=w - cw),
                height: ch,
                width: cw,
            };
        }
    }
    // Fallback: largest centred crop with a ratio inside the range.
    let in_ratio = w as f32 / h as f32;
    let (cw, ch) = if in_ratio < p.ratio_range.0 {
        (
            w,
            ((w as f32 / p.ratio_range.0).round() as usize).clamp(1, h),
        )
    } else if in_ratio > p.ratio_range.1 {
        (
            ((h as f32 * p.ratio_range.1).round() as usize).clamp(1, w),
            h,
        )
    } else {
        (w, h)
    };
    Region {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Resizes `region` of every channel to `out × out` with half-pixel-centred
/// bilinear interpolation, optionally mirrored horizontally.
fn resample(x: &Tensor, region: Region, out: usize, flip: bool) -> Result<Tensor> {
    let (c, h, w) = chw(x, "resize")?;
    let sy = region.height as f32 / out as f32;
    let sx = region.width as f32 / out as f32;
    let src_coord = |d: usize, scale: f32, len: usize| {
        ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32)
    };
    let mut data = Vec::with_capacity(c * out * out);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out {
            let y = region.top as f32 + src_coord(oy, sy, region.height);
            for ox in 0..out {
                let ox_src = if flip { out - 1 - ox } else { ox };
                let xx = region.left as f32 + src_coord(ox_src, sx, region.width);
                data.push(sample_bilinear(plane, h, w, y, xx, 0.0));
            }
        }
    }
    Tensor::new(data, &[c, out, out])
}

/// Bilinear resize of the whole image to `out × out`.
pub fn resize_bilinear(x: &Tensor, out: usize) -> Result<Tensor> {
    let (_, h, w) = chw(x, "resize")?;
    if out == 0 {
        return Err(Error::Config("resize target must be >= 1".into()));
    }
    resample(
        x,
        Region {
            top: 0,
            left: 0,
            height: h,
            width: w,
        },
        out,
        false,
    )
}

/// Random area/aspect crop resized to `out × out`, then a horizontal flip
/// with probability `flip_prob`.
pub fn random_resized_crop_flip<R: Rng + ?Sized>(
    x: &Tensor,
    out: usize,
    params: &CropParams,
    rng: &mut R,
) -> Result<Tensor> {
    let (_, h, w) = chw(x, "random_resized_crop_flip")?;
    let (lo, hi) = params.scale_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) || out == 0 {
        return Err(Error::Config(format!("invalid crop parameters {params:?}")));
    }
    let region = sample_crop(h, w, params, rng);
    let flip = params.flip_prob > 0.0 && rng.random::<f32>() < params.flip_prob;
    resample(x, region, out, flip)
}
