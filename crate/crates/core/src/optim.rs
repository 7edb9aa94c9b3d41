//! AdamW with decoupled weight decay, the triangular learning-rate schedule
//! and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr_peak: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// When false, rank-1 tensors (biases and norm affines) are not decayed.
    pub decay_norm_and_bias: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_peak: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_norm_and_bias: true,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr_peak >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW settings {self:?}")))
        }
    }
}

/// First and second moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    /// One entry per parameter, in the order passed to [`adamw_step`].
    pub moments: Vec<Moments>,
    pub step: u64,
}

/// One AdamW update of every parameter. Each parameter is replaced by a new
/// leaf tensor holding the updated values.
///
/// `θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`, with the decay applied to the
/// pre-step θ rather than folded into the gradient.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Config(format!(
            "adamw_step: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.moments.is_empty() {
        state.moments = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
    }
    for ((p, g), mom) in params.iter().zip(grads).zip(&state.moments) {
        if p.numel() != g.len() || mom.m.len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                lhs: p.dims().to_vec(),
                rhs: vec![g.len()],
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
    for ((param, grad), mom) in params.iter_mut().zip(grads).zip(state.moments.iter_mut()) {
        let wd = if cfg.decay_norm_and_bias || param.dims().len() > 1 {
            cfg.weight_decay
        } else {
            0.0
        };
        let decay = 1.0 - lr * wd;
        let mut next = Vec::with_capacity(param.numel());
        for (((&theta, &g), m), v) in param
            .data()
            .iter()
            .zip(grad)
            .zip(mom.m.iter_mut())
            .zip(mom.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = (*m as f64 / bc1) as f32;
            let v_hat = (*v as f64 / bc2) as f32;
            next.push(theta * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
        **param = Tensor::param(next, param.dims())?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: u64,
    pub lr_peak: f32,
}

impl ScheduleConfig {
    /// Schedule spanning `epochs` epochs of `steps_per_epoch` optimizer steps.
    pub fn from_epochs(epochs: u64, steps_per_epoch: u64, lr_peak: f32) -> Self {
        Self {
            total_steps: (epochs * steps_per_epoch).max(1),
            lr_peak,
        }
    }
}

/// Triangular schedule: linear 0 → peak over `[0, T/2]`, then peak → 0 over
/// `[T/2, T]`. Symmetric in `t ↔ T − t` exactly.
pub fn lr_at(t: u64, sched: &ScheduleConfig) -> Result<f32> {
    let total = sched.total_steps;
    if total == 0 || t > total {
        return Err(Error::OutOfRange {
            op: "lr_at",
            value: t as f64,
            range: format!("[0, {total}]"),
        });
    }
    let rise = 2 * t;
    let num = if rise <= total {
        rise
    } else {
        2 * total - rise
    };
    Ok((sched.lr_peak as f64 * num as f64 / total as f64) as f32)
}

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_global_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= scale);
    }
    norm as f32
}
