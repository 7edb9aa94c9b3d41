//! 2-D convolution with groups, stride and `same`/`valid` zero padding.
//!
//! Three interchangeable kernels compute the same function:
//! * [`ConvAlgo::Direct`]: plain nested loops over every tap, the reference.
//! * [`ConvAlgo::Im2col`]: unfold patches into columns and multiply with GEMM.
//! * a depthwise fast path (one input and one output channel per group) that
//!   accumulates whole shifted rows per kernel tap.
//!
//! [`ConvAlgo::Auto`] picks the depthwise path for depthwise specs and im2col
//! otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gemm, MatRef};
use crate::tensor::{GradFn, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output keeps `ceil(input / stride)`; even kernels pad one extra row
    /// and column on the bottom/right.
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAlgo {
    Auto,
    Direct,
    Im2col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        groups: usize,
        padding: Padding,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            groups,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `c_in -> h` patch embedding: kernel and stride `p`, no padding.
    pub fn patch_embedding(in_channels: usize, hidden: usize, patch: usize) -> Result<Self> {
        Self::new(in_channels, hidden, patch, patch, 1, Padding::Valid)
    }

    /// One group per channel, stride 1, `same` padding.
    pub fn depthwise(channels: usize, kernel_size: usize) -> Result<Self> {
        Self::new(channels, channels, kernel_size, 1, channels, Padding::Same)
    }

    /// 1×1 convolution mixing channels.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, 1, 1, 1, Padding::Valid)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_size == 0
            || self.stride == 0
            || self.groups == 0
        {
            return bad(format!("conv extents must be >= 1: {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return bad(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    /// Output extent and leading pad along one axis.
    pub fn output_extent(&self, input: usize) -> Option<(usize, usize)> {
        let (k, s) = (self.kernel_size, self.stride);
        match self.padding {
            Padding::Valid => (input >= k).then(|| ((input - k) / s + 1, 0)),
            Padding::Same => {
                let out = input.div_ceil(s);
                let total = ((out - 1) * s + k).saturating_sub(input);
                Some((out, total / 2))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    groups: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn in_per_group(&self) -> usize {
        self.in_c / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_c / self.groups
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn taps(&self) -> usize {
        self.k * self.k
    }
}

/// Range of output positions whose input coordinate for `tap` is in bounds.
fn valid_outputs(
    in_len: usize,
    pad: usize,
    tap: usize,
    stride: usize,
    out_len: usize,
) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let last_in = in_len as isize - 1 + pad as isize - tap as isize;
    if last_in < 0 {
        return (0, 0);
    }
    let hi = (last_in as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn geometry(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let mismatch = |rhs: &[usize]| Error::ShapeMismatch {
        op: "conv2d",
        lhs: input.dims().to_vec(),
        rhs: rhs.to_vec(),
    };
    let (batch, in_c, in_h, in_w) = input
        .shape()
        .nchw()
        .ok_or_else(|| mismatch(&spec.weight_dims()))?;
    if in_c != spec.in_channels {
        return Err(mismatch(&spec.weight_dims()));
    }
    if weight.dims() != spec.weight_dims() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            lhs: weight.dims().to_vec(),
            rhs: spec.weight_dims().to_vec(),
        });
    }
    if bias.dims() != [spec.out_channels] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: bias.dims().to_vec(),
            rhs: vec![spec.out_channels],
        });
    }
    let too_small = || Error::InputTooSmall {
        op: "conv2d",
        input: input.dims().to_vec(),
        kernel: spec.kernel_size,
    };
    let (out_h, pad_top) = spec.output_extent(in_h).ok_or_else(too_small)?;
    let (out_w, pad_left) = spec.output_extent(in_w).ok_or_else(too_small)?;
    Ok(Geometry {
        batch,
        in_c,
        in_h,
        in_w,
        out_c: spec.out_channels,
        out_h,
        out_w,
        k: spec.kernel_size,
        stride: spec.stride,
        groups: spec.groups,
        pad_top,
        pad_left,
    })
}

/// Convolution with the automatically selected kernel.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_with(input, weight, bias, spec, ConvAlgo::Auto)
}

pub fn conv2d_with(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    algo: ConvAlgo,
) -> Result<Tensor> {
    let geo = geometry(input, weight, bias, spec)?;
    let algo = match algo {
        ConvAlgo::Auto if spec.is_depthwise() => Kernel::Depthwise,
        ConvAlgo::Auto | ConvAlgo::Im2col => Kernel::Im2col,
        ConvAlgo::Direct => Kernel::Direct,
    };
    let out = match algo {
        Kernel::Direct => direct::forward(&geo, input.data(), weight.data(), bias.data()),
        Kernel::Im2col => im2col::forward(&geo, input.data(), weight.data(), bias.data()),
        Kernel::Depthwise => depthwise::forward(&geo, input.data(), weight.data(), bias.data()),
    };
    Ok(Tensor::from_op(
        Shape::new(vec![geo.batch, geo.out_c, geo.out_h, geo.out_w])?,
        out,
        ConvBackward {
            parents: [input.clone(), weight.clone(), bias.clone()],
            geo,
            kernel: algo,
        },
    ))
}

#[derive(Clone, Copy, Debug)]
enum Kernel {
    Direct,
    Im2col,
    Depthwise,
}

struct ConvBackward {
    parents: [Tensor; 3],
    geo: Geometry,
    kernel: Kernel,
}

impl GradFn for ConvBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let [x, w, _] = &self.parents;
        let geo = &self.geo;
        let (gx, gw) = match self.kernel {
            Kernel::Direct => direct::backward(geo, x.data(), w.data(), g, needs[0], needs[1]),
            Kernel::Im2col => im2col::backward(geo, x.data(), w.data(), g, needs[0], needs[1]),
            Kernel::Depthwise => {
                depthwise::backward(geo, x.data(), w.data(), g, needs[0], needs[1])
            }
        };
        let gb = needs[2].then(|| bias_grad(geo, g));
        vec![gx, gw, gb]
    }
}

fn bias_grad(geo: &Geometry, g: &[f32]) -> Vec<f32> {
    let plane = geo.out_plane();
    (0..geo.out_c)
        .into_par_iter()
        .map(|o| {
            (0..geo.batch)
                .map(|b| {
                    let start = (b * geo.out_c + o) * plane;
                    g[start..start + plane]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>()
                })
                .sum::<f64>() as f32
        })
        .collect()
}

mod direct {
    use super::*;

    pub(super) fn forward(geo: &Geometry, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; geo.batch * geo.out_c * geo.out_plane()];
        let (cg, og, k) = (geo.in_per_group(), geo.out_per_group(), geo.k);
        out.par_chunks_mut(geo.out_plane())
            .enumerate()
            .for_each(|(plane, dst)| {
                let (b, o) = (plane / geo.out_c, plane % geo.out_c);
                let group = o / og;
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        let mut acc = bias[o];
                        for ci in 0..cg {
                            let c = group * cg + ci;
                            for ki in 0..k {
                                let iy = (oy * geo.stride + ki) as isize - geo.pad_top as isize;
                                if iy < 0 || iy >= geo.in_h as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let ix =
                                        (ox * geo.stride + kj) as isize - geo.pad_left as isize;
                                    if ix < 0 || ix >= geo.in_w as isize {
                                        continue;
                                    }
                                    let xv = x[((b * geo.in_c + c) * geo.in_h + iy as usize)
                                        * geo.in_w
                                        + ix as usize];
                                    acc += w[((o * cg + ci) * k + ki) * k + kj] * xv;
                                }
                            }
                        }
                        dst[oy * geo.out_w + ox] = acc;
                    }
                }
            });
        out
    }

    /// Visits every (output position, input position, weight index) triple.
    fn for_each_tap(geo: &Geometry, b: usize, o: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (cg, og, k) = (geo.in_per_group(), geo.out_per_group(), geo.k);
        let group = o / og;
        for oy in 0..geo.out_h {
            for ox in 0..geo.out_w {
                let out_idx = ((b * geo.out_c + o) * geo.out_h + oy) * geo.out_w + ox;
                for ci in 0..cg {
                    let c = group * cg + ci;
                    for ki in 0..k {
                        let iy = (oy * geo.stride + ki) as isize - geo.pad_top as isize;
                        if iy < 0 || iy >= geo.in_h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * geo.stride + kj) as isize - geo.pad_left as isize;
                            if ix < 0 || ix >= geo.in_w as isize {
                                continue;
                            }
                            let in_idx = ((b * geo.in_c + c) * geo.in_h + iy as usize) * geo.in_w
                                + ix as usize;
                            f(out_idx, in_idx, ((o * cg + ci) * k + ki) * k + kj);
                        }
                    }
                }
            }
        }
    }

    pub(super) fn backward(
        geo: &Geometry,
        x: &[f32],
        w: &[f32],
        g: &[f32],
        need_x: bool,
        need_w: bool,
    ) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
        let gx = need_x.then(|| {
            let per_image = geo.in_c * geo.in_plane();
            let mut gx = vec![0.0f32; geo.batch * per_image];
            gx.par_chunks_mut(per_image)
                .enumerate()
                .for_each(|(b, dst)| {
                    for o in 0..geo.out_c {
                        for_each_tap(geo, b, o, |oi, ii, wi| {
                            dst[ii - b * per_image] += w[wi] * g[oi]
                        });
                    }
                });
            gx
        });
        let gw = need_w.then(|| {
            let per_out = w.len() / geo.out_c;
            let mut gw = vec![0.0f32; w.len()];
            gw.par_chunks_mut(per_out).enumerate().for_each(|(o, dst)| {
                let mut acc = vec![0.0f64; per_out];
                for b in 0..geo.batch {
                    for_each_tap(geo, b, o, |oi, ii, wi| {
                        acc[wi - o * per_out] += (g[oi] * x[ii]) as f64
                    });
                }
                dst.iter_mut().zip(acc).for_each(|(d, a)| *d = a as f32);
            });
            gw
        });
        (gx, gw)
    }
}

mod depthwise {
    use super::*;

    pub(super) fn forward(geo: &Geometry, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
        let (in_plane, out_plane, taps) = (geo.in_plane(), geo.out_plane(), geo.taps());
        let mut out = vec![0.0; geo.batch * geo.out_c * out_plane];
        out.par_chunks_mut(out_plane)
            .enumerate()
            .for_each(|(plane, dst)| {
                let c = plane % geo.out_c;
                dst.fill(bias[c]);
                let src = &x[plane * in_plane..(plane + 1) * in_plane];
                let wk = &w[c * taps..(c + 1) * taps];
                each_row_segment(geo, |tap, iy, ix0, oy, ox0, len| {
                    let wv = wk[tap];
                    let xr = &src[iy * geo.in_w..];
                    let orow = &mut dst[oy * geo.out_w + ox0..oy * geo.out_w + ox0 + len];
                    if geo.stride == 1 {
                        orow.iter_mut()
                            .zip(&xr[ix0..ix0 + len])
                            .for_each(|(o, &xv)| *o += wv * xv);
                    } else {
                        for (j, o) in orow.iter_mut().enumerate() {
                            *o += wv * xr[ix0 + j * geo.stride];
                        }
                    }
                });
            });
        out
    }

    /// Calls `f(tap, iy, ix0, oy, ox0, len)` for every output row segment
    /// that reads in-bounds input for a given kernel tap.
    fn each_row_segment(
        geo: &Geometry,
        mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
    ) {
        let k = geo.k;
        for ki in 0..k {
            let (oy0, oy1) = valid_outputs(geo.in_h, geo.pad_top, ki, geo.stride, geo.out_h);
            for kj in 0..k {
                let (ox0, ox1) = valid_outputs(geo.in_w, geo.pad_left, kj, geo.stride, geo.out_w);
                if ox0 >= ox1 {
                    continue;
                }
                let ix0 = ox0 * geo.stride + kj - geo.pad_left;
                for oy in oy0..oy1 {
                    let iy = oy * geo.stride + ki - geo.pad_top;
                    f(ki * k + kj, iy, ix0, oy, ox0, ox1 - ox0);
                }
            }
        }
    }

    pub(super) fn backward(
        geo: &Geometry,
        x: &[f32],
        w: &[f32],
        g: &[f32],
        need_x: bool,
        need_w: bool,
    ) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
        let (in_plane, out_plane, taps) = (geo.in_plane(), geo.out_plane(), geo.taps());
        let gx = need_x.then(|| {
            let mut gx = vec![0.0f32; x.len()];
            gx.par_chunks_mut(in_plane)
                .enumerate()
                .for_each(|(plane, dst)| {
                    let c = plane % geo.in_c;
                    let gsrc = &g[plane * out_plane..(plane + 1) * out_plane];
                    let wk = &w[c * taps..(c + 1) * taps];
                    each_row_segment(geo, |tap, iy, ix0, oy, ox0, len| {
                        let wv = wk[tap];
                        let grow = &gsrc[oy * geo.out_w + ox0..oy * geo.out_w + ox0 + len];
                        let xr = &mut dst[iy * geo.in_w..];
                        if geo.stride == 1 {
                            xr[ix0..ix0 + len]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, &gv)| *d += wv * gv);
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                xr[ix0 + j * geo.stride] += wv * gv;
                            }
                        }
                    });
                });
            gx
        });
        let gw = need_w.then(|| {
            let mut gw = vec![0.0f32; w.len()];
            gw.par_chunks_mut(taps).enumerate().for_each(|(c, dst)| {
                let mut acc = vec![0.0f64; taps];
                for b in 0..geo.batch {
                    let plane = b * geo.in_c + c;
                    let src = &x[plane * in_plane..(plane + 1) * in_plane];
                    let gsrc = &g[plane * out_plane..(plane + 1) * out_plane];
                    each_row_segment(geo, |tap, iy, ix0, oy, ox0, len| {
                        let grow = &gsrc[oy * geo.out_w + ox0..oy * geo.out_w + ox0 + len];
                        let xr = &src[iy * geo.in_w..];
                        let dot: f32 = if geo.stride == 1 {
                            grow.iter()
                                .zip(&xr[ix0..ix0 + len])
                                .map(|(a, b)| a * b)
                                .sum()
                        } else {
                            grow.iter()
                                .enumerate()
                                .map(|(j, gv)| gv * xr[ix0 + j * geo.stride])
                                .sum()
                        };
                        acc[tap] += dot as f64;
                    });
                }
                dst.iter_mut().zip(acc).for_each(|(d, a)| *d = a as f32);
            });
            gw
        });
        (gx, gw)
    }
}

mod im2col {
    use super::*;

    /// Columns for one image and one group: rows are (channel, ki, kj),
    /// columns are output positions.
    fn unfold(geo: &Geometry, image: &[f32], group: usize, col: &mut [f32]) {
        let (cg, k, out_plane) = (geo.in_per_group(), geo.k, geo.out_plane());
        col.fill(0.0);
        for ci in 0..cg {
            let plane = &image[(group * cg + ci) * geo.in_plane()..][..geo.in_plane()];
            for ki in 0..k {
                let (oy0, oy1) = valid_outputs(geo.in_h, geo.pad_top, ki, geo.stride, geo.out_h);
                for kj in 0..k {
                    let (ox0, ox1) =
                        valid_outputs(geo.in_w, geo.pad_left, kj, geo.stride, geo.out_w);
                    let row = &mut col[((ci * k + ki) * k + kj) * out_plane..][..out_plane];
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * geo.stride + ki - geo.pad_top;
                        let src = &plane[iy * geo.in_w..];
                        for ox in ox0..ox1 {
                            row[oy * geo.out_w + ox] = src[ox * geo.stride + kj - geo.pad_left];
                        }
                    }
                }
            }
        }
    }

    /// Inverse scatter-add of [`unfold`].
    fn fold(geo: &Geometry, col: &[f32], group: usize, image: &mut [f32]) {
        let (cg, k, out_plane) = (geo.in_per_group(), geo.k, geo.out_plane());
        for ci in 0..cg {
            let plane = &mut image[(group * cg + ci) * geo.in_plane()..][..geo.in_plane()];
            for ki in 0..k {
                let (oy0, oy1) = valid_outputs(geo.in_h, geo.pad_top, ki, geo.stride, geo.out_h);
                for kj in 0..k {
                    let (ox0, ox1) =
                        valid_outputs(geo.in_w, geo.pad_left, kj, geo.stride, geo.out_w);
                    let row = &col[((ci * k + ki) * k + kj) * out_plane..][..out_plane];
                    for oy in oy0..oy1 {
                        let iy = oy * geo.stride + ki - geo.pad_top;
                        let dst = &mut plane[iy * geo.in_w..];
                        for ox in ox0..ox1 {
                            dst[ox * geo.stride + kj - geo.pad_left] += row[oy * geo.out_w + ox];
                        }
                    }
                }
            }
        }
    }

    /// A 1×1 stride-1 unpadded kernel reads the input planes directly.
    fn is_identity_unfold(geo: &Geometry) -> bool {
        geo.k == 1 && geo.stride == 1 && geo.pad_top == 0 && geo.pad_left == 0
    }

    /// Runs `f(group, columns)` with the unfolded columns of every group.
    fn with_columns(geo: &Geometry, image: &[f32], mut f: impl FnMut(usize, &[f32])) {
        let cg = geo.in_per_group();
        if is_identity_unfold(geo) {
            for group in 0..geo.groups {
                f(
                    group,
                    &image[group * cg * geo.in_plane()..(group + 1) * cg * geo.in_plane()],
                );
            }
        } else {
            let mut col = vec![0.0f32; cg * geo.taps() * geo.out_plane()];
            for group in 0..geo.groups {
                unfold(geo, image, group, &mut col);
                f(group, &col);
            }
        }
    }

    pub(super) fn forward(geo: &Geometry, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
        let (og, out_plane) = (geo.out_per_group(), geo.out_plane());
        let rows = geo.in_per_group() * geo.taps();
        let in_image = geo.in_c * geo.in_plane();
        let mut out = vec![0.0; geo.batch * geo.out_c * out_plane];
        out.par_chunks_mut(geo.out_c * out_plane)
            .enumerate()
            .for_each(|(b, dst)| {
                for (o, plane) in dst.chunks_mut(out_plane).enumerate() {
                    plane.fill(bias[o]);
                }
                with_columns(geo, &x[b * in_image..(b + 1) * in_image], |group, col| {
                    gemm(
                        og,
                        rows,
                        out_plane,
                        1.0,
                        MatRef::rows(&w[group * og * rows..], rows),
                        MatRef::rows(col, out_plane),
                        1.0,
                        &mut dst[group * og * out_plane..(group + 1) * og * out_plane],
                    );
                });
            });
        out
    }

    pub(super) fn backward(
        geo: &Geometry,
        x: &[f32],
        w: &[f32],
        g: &[f32],
        need_x: bool,
        need_w: bool,
    ) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
        let (og, out_plane) = (geo.out_per_group(), geo.out_plane());
        let rows = geo.in_per_group() * geo.taps();
        let in_image = geo.in_c * geo.in_plane();
        let out_image = geo.out_c * out_plane;

        let gx = need_x.then(|| {
            let mut gx = vec![0.0f32; x.len()];
            gx.par_chunks_mut(in_image)
                .enumerate()
                .for_each(|(b, dst)| {
                    let gimg = &g[b * out_image..(b + 1) * out_image];
                    let mut col = vec![0.0f32; rows * out_plane];
                    for group in 0..geo.groups {
                        gemm(
                            rows,
                            og,
                            out_plane,
                            1.0,
                            MatRef::transposed(
                                &w[group * og * rows..(group + 1) * og * rows],
                                rows,
                            ),
                            MatRef::rows(&gimg[group * og * out_plane..], out_plane),
                            0.0,
                            &mut col,
                        );
                        if is_identity_unfold(geo) {
                            let cg = geo.in_per_group();
                            dst[group * cg * geo.in_plane()..(group + 1) * cg * geo.in_plane()]
                                .copy_from_slice(&col);
                        } else {
                            fold(geo, &col, group, dst);
                        }
                    }
                });
            gx
        });

        let gw = need_w.then(|| {
            // Per-image partials reduced in batch order keep the result
            // independent of the thread count.
            let partials: Vec<Vec<f32>> = (0..geo.batch)
                .into_par_iter()
                .map(|b| {
                    let gimg = &g[b * out_image..(b + 1) * out_image];
                    let mut part = vec![0.0f32; w.len()];
                    with_columns(geo, &x[b * in_image..(b + 1) * in_image], |group, col| {
                        gemm(
                            og,
                            out_plane,
                            rows,
                            1.0,
                            MatRef::rows(&gimg[group * og * out_plane..], out_plane),
                            MatRef::transposed(col, out_plane),
                            0.0,
                            &mut part[group * og * rows..(group + 1) * og * rows],
                        );
                    });
                    part
                })
                .collect();
            let mut acc = vec![0.0f64; w.len()];
            for part in &partials {
                acc.iter_mut().zip(part).for_each(|(a, &p)| *a += p as f64);
            }
            acc.into_iter().map(|a| a as f32).collect()
        });
        (gx, gw)
    }
}
