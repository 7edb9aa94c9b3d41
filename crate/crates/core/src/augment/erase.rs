use rand::Rng;
use rand_distr::StandardNormal;

use super::image::{chw, Region};
use super::AugmentConfig;
use crate::error::Result;
use crate::tensor::Tensor;

const AREA_RANGE: (f32, f32) = (0.02, 0.33);
const ASPECT_RANGE: (f32, f32) = (0.3, 3.3);
const ATTEMPTS: usize = 10;

/// With probability `erase_prob`, replaces one rectangle with per-pixel
/// standard normal noise.
pub fn random_erase<R: Rng + ?Sized>(
    x: &Tensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor> {
    Ok(random_erase_region(x, cfg.erase_prob, rng)?.0)
}

/// Like [`random_erase`], also returning the erased rectangle.
pub fn random_erase_region<R: Rng + ?Sized>(
    x: &Tensor,
    erase_prob: f32,
    rng: &mut R,
) -> Result<(Tensor, Option<Region>)> {
    let (c, h, w) = chw(x, "random_erase")?;
    if erase_prob <= 0.0 || rng.random::<f32>() >= erase_prob {
        return Ok((x.clone(), None));
    }
    let area = (h * w) as f32;
    let (la0, la1) = (ASPECT_RANGE.0.ln(), ASPECT_RANGE.1.ln());
    for _ in 0..ATTEMPTS {
        let target = area * rng.random_range(AREA_RANGE.0..AREA_RANGE.1);
        let aspect = rng.random_range(la0..la1).exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let region = Region {
            top: rng.random_range(0..=h - eh),
            left: rng.random_range(0..=w - ew),
            height: eh,
            width: ew,
        };
        let mut data = x.to_vec();
        for ch in 0..c {
            for y in region.top..region.top + eh {
                for xx in region.left..region.left + ew {
                    data[(ch * h + y) * w + xx] = rng.sample(StandardNormal);
                }
            }
        }
        return Ok((Tensor::new(data, x.dims())?, Some(region)));
    }
    Ok((x.clone(), None))
}
