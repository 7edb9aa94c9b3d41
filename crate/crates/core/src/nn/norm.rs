//! BatchNorm2d and a channel-wise LayerNorm for NCHW tensors.

use rayon::prelude::*;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{GradFn, Tensor};

pub const DEFAULT_MOMENTUM: f32 = 0.1;
pub const DEFAULT_EPS: f32 = 1e-5;

/// Affine parameters plus running statistics of one BatchNorm2d layer.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    /// Unbiased running estimate of the per-channel variance.
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::param(vec![1.0; channels], &[channels])?,
            beta: Tensor::param(vec![0.0; channels], &[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

fn nchw(input: &Tensor, channels: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    match input.shape().nchw() {
        Some((b, c, h, w)) if c == channels => Ok((b, c, h * w)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: input.dims().to_vec(),
            rhs: vec![channels],
        }),
    }
}

/// Per-channel mean and biased variance, accumulated in f64.
fn channel_stats(x: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<(f64, f64)> {
    (0..channels)
        .into_par_iter()
        .map(|c| {
            let n = (batch * plane) as f64;
            let mut sum = 0.0f64;
            for b in 0..batch {
                sum += x[(b * channels + c) * plane..][..plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mean = sum / n;
            let mut sq = 0.0f64;
            for b in 0..batch {
                sq += x[(b * channels + c) * plane..][..plane]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            (mean, sq / n)
        })
        .collect()
}

/// New running statistics produced by a train-mode BatchNorm call.
#[derive(Clone, Debug)]
pub struct RunningUpdate {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningUpdate {
    pub fn apply(self, state: &mut BatchNormState) {
        state.running_mean = self.mean;
        state.running_var = self.var;
    }
}

/// BatchNorm over (batch, height, width) per channel.
///
/// Train mode normalizes with the batch statistics and updates the running
/// statistics in `state`; eval mode uses the running statistics.
pub fn batchnorm2d(input: &Tensor, state: &mut BatchNormState, mode: Mode) -> Result<Tensor> {
    let (out, update) = batchnorm2d_apply(input, state, mode)?;
    if let Some(update) = update {
        update.apply(state);
    }
    Ok(out)
}

/// Like [`batchnorm2d`] but returns the running-statistics update instead of
/// writing it, so `state` can stay shared.
pub fn batchnorm2d_apply(
    input: &Tensor,
    state: &BatchNormState,
    mode: Mode,
) -> Result<(Tensor, Option<RunningUpdate>)> {
    let channels = state.channels();
    let (batch, _, plane) = nchw(input, channels, "batchnorm2d")?;
    let x = input.data();
    let mut update = None;
    let (mean, inv_std): (Vec<f32>, Vec<f32>) = match mode {
        Mode::Train => {
            let count = batch * plane;
            if count < 2 {
                return Err(Error::BatchNormTooFewValues(count));
            }
            let stats = channel_stats(x, batch, channels, plane);
            let m = state.momentum;
            let unbias = count as f64 / (count - 1) as f64;
            let running_mean: Vec<f32> = state
                .running_mean
                .data()
                .iter()
                .zip(&stats)
                .map(|(&r, &(mu, _))| (1.0 - m) * r + m * mu as f32)
                .collect();
            let running_var: Vec<f32> = state
                .running_var
                .data()
                .iter()
                .zip(&stats)
                .map(|(&r, &(_, var))| (1.0 - m) * r + m * (var * unbias) as f32)
                .collect();
            update = Some(RunningUpdate {
                mean: Tensor::new(running_mean, &[channels])?,
                var: Tensor::new(running_var, &[channels])?,
            });
            stats
                .iter()
                .map(|&(mu, var)| (mu as f32, (1.0 / (var + state.eps as f64).sqrt()) as f32))
                .unzip()
        }
        Mode::Eval => (
            state.running_mean.to_vec(),
            state
                .running_var
                .data()
                .iter()
                .map(|&v| (1.0 / (v as f64 + state.eps as f64).sqrt()) as f32)
                .collect(),
        ),
    };

    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut x_hat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    x_hat
        .par_chunks_mut(plane)
        .zip(out.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(idx, (xh, o))| {
            let c = idx % channels;
            let src = &x[idx * plane..(idx + 1) * plane];
            for ((xh, o), &v) in xh.iter_mut().zip(o.iter_mut()).zip(src) {
                *xh = (v - mean[c]) * inv_std[c];
                *o = gamma[c] * *xh + beta[c];
            }
        });
    let out = Tensor::from_op(
        input.shape().clone(),
        out,
        BatchNormBackward {
            parents: [input.clone(), state.gamma.clone(), state.beta.clone()],
            x_hat,
            inv_std,
            batch,
            plane,
            batch_stats: mode == Mode::Train,
        },
    );
    Ok((out, update))
}

struct BatchNormBackward {
    parents: [Tensor; 3],
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    batch: usize,
    plane: usize,
    batch_stats: bool,
}

impl GradFn for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let channels = self.inv_std.len();
        let (batch, plane) = (self.batch, self.plane);
        let gamma = self.parents[1].data();
        // Per channel: Σ g and Σ g·x̂.
        let sums: Vec<(f64, f64)> = (0..channels)
            .into_par_iter()
            .map(|c| {
                let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                for b in 0..batch {
                    let off = (b * channels + c) * plane;
                    for (&gv, &xh) in g[off..off + plane]
                        .iter()
                        .zip(&self.x_hat[off..off + plane])
                    {
                        sg += gv as f64;
                        sgx += gv as f64 * xh as f64;
                    }
                }
                (sg, sgx)
            })
            .collect();
        let gx = needs[0].then(|| {
            let n = (batch * plane) as f64;
            let mut gx = vec![0.0f32; g.len()];
            gx.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
                let c = idx % channels;
                let scale = gamma[c] as f64 * self.inv_std[c] as f64;
                let src = &g[idx * plane..(idx + 1) * plane];
                let xh = &self.x_hat[idx * plane..(idx + 1) * plane];
                if self.batch_stats {
                    // The three terms nearly cancel; f32 here loses small gradients.
                    let (mg, mgx) = (sums[c].0 / n, sums[c].1 / n);
                    for ((d, &gv), &x) in dst.iter_mut().zip(src).zip(xh) {
                        *d = (scale * (gv as f64 - mg - x as f64 * mgx)) as f32;
                    }
                } else {
                    for (d, &gv) in dst.iter_mut().zip(src) {
                        *d = (scale * gv as f64) as f32;
                    }
                }
            });
            gx
        });
        let ggamma = needs[1].then(|| sums.iter().map(|s| s.1 as f32).collect());
        let gbeta = needs[2].then(|| sums.iter().map(|s| s.0 as f32).collect());
        vec![gx, ggamma, gbeta]
    }
}

/// Normalizes across channels independently at every (batch, y, x)
/// position, then applies a per-channel affine map.
pub fn layernorm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let channels = gamma.numel();
    if beta.numel() != channels {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            lhs: gamma.dims().to_vec(),
            rhs: beta.dims().to_vec(),
        });
    }
    let (batch, _, plane) = nchw(input, channels, "layernorm")?;
    let x = input.data();
    let image = channels * plane;
    let mut x_hat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; batch * plane];
    x_hat
        .par_chunks_mut(image)
        .zip(inv_std.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(b, (xh, istd))| {
            let src = &x[b * image..(b + 1) * image];
            let mut mean = vec![0.0f64; plane];
            for c in 0..channels {
                mean.iter_mut()
                    .zip(&src[c * plane..(c + 1) * plane])
                    .for_each(|(m, &v)| *m += v as f64);
            }
            mean.iter_mut().for_each(|m| *m /= channels as f64);
            let mut var = vec![0.0f64; plane];
            for c in 0..channels {
                var.iter_mut()
                    .zip(&src[c * plane..(c + 1) * plane])
                    .zip(&mean)
                    .for_each(|((s, &v), &m)| *s += (v as f64 - m).powi(2));
            }
            for (i, s) in istd.iter_mut().zip(&var) {
                *i = (1.0 / (s / channels as f64 + eps as f64).sqrt()) as f32;
            }
            for c in 0..channels {
                let off = c * plane;
                for p in 0..plane {
                    xh[off + p] = ((src[off + p] as f64 - mean[p]) as f32) * istd[p];
                }
            }
        });
    let (gm, bt) = (gamma.data(), beta.data());
    let out: Vec<f32> = x_hat
        .iter()
        .enumerate()
        .map(|(i, &xh)| {
            let c = (i / plane) % channels;
            gm[c] * xh + bt[c]
        })
        .collect();
    Ok(Tensor::from_op(
        input.shape().clone(),
        out,
        LayerNormBackward {
            parents: [input.clone(), gamma.clone(), beta.clone()],
            x_hat,
            inv_std,
            channels,
            plane,
        },
    ))
}

struct LayerNormBackward {
    parents: [Tensor; 3],
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    channels: usize,
    plane: usize,
}

impl GradFn for LayerNormBackward {
    fn name(&self) -> &'static str {
        "layernorm"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (channels, plane) = (self.channels, self.plane);
        let image = channels * plane;
        let gamma = self.parents[1].data();
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0f32; g.len()];
            gx.par_chunks_mut(image).enumerate().for_each(|(b, dst)| {
                let gi = &g[b * image..(b + 1) * image];
                let xh = &self.x_hat[b * image..(b + 1) * image];
                let istd = &self.inv_std[b * plane..(b + 1) * plane];
                // dx̂ = g·γ; per position mean(dx̂) and mean(dx̂·x̂).
                let mut m1 = vec![0.0f64; plane];
                let mut m2 = vec![0.0f64; plane];
                for c in 0..channels {
                    for p in 0..plane {
                        let d = gi[c * plane + p] as f64 * gamma[c] as f64;
                        m1[p] += d;
                        m2[p] += d * xh[c * plane + p] as f64;
                    }
                }
                let n = channels as f64;
                for c in 0..channels {
                    for p in 0..plane {
                        let i = c * plane + p;
                        let d = gi[i] as f64 * gamma[c] as f64;
                        dst[i] =
                            (istd[p] as f64 * (d - m1[p] / n - xh[i] as f64 * (m2[p] / n))) as f32;
                    }
                }
            });
            gx
        });
        let mut sg = vec![0.0f64; channels];
        let mut sgx = vec![0.0f64; channels];
        if needs[1] || needs[2] {
            for (i, (&gv, &xh)) in g.iter().zip(&self.x_hat).enumerate() {
                let c = (i / plane) % channels;
                sg[c] += gv as f64;
                sgx[c] += (gv * xh) as f64;
            }
        }
        let ggamma = needs[1].then(|| sgx.iter().map(|&v| v as f32).collect());
        let gbeta = needs[2].then(|| sg.iter().map(|&v| v as f32).collect());
        vec![gx, ggamma, gbeta]
    }
}
