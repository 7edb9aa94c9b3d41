use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

pub(crate) fn chw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.dims() {
        &[c, h, w] => Ok((c, h, w)),
        dims => Err(Error::ShapeMismatch {
            op,
            lhs: dims.to_vec(),
            rhs: vec![],
        }),
    }
}

/// Bilinear sample of one plane at (y, x); out-of-range taps read `fill`.
#[inline]
pub(crate) fn sample_bilinear(plane: &[f32], h: usize, w: usize, y: f32, x: f32, fill: f32) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            plane[yy as usize * w + xx as usize]
        } else {
            fill
        }
    };
    let top = if fx == 0.0 {
        at(y0, x0)
    } else {
        at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx
    };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        at(y0 + 1, x0)
    } else {
        at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx
    };
    top * (1.0 - fy) + bottom * fy
}
