//! The ConvMixer network: patch embedding, `depth` depthwise/pointwise
//! blocks, global average pooling and a linear classifier.
//!
//! ```text
//! z0   = Norm(act(Conv_{c_in→h}(x, kernel=p, stride=p)))
//! z'   = Norm(act(DepthwiseConv_k(z))) + z        (residual_depthwise)
//! next = Norm(act(PointwiseConv(z')))  [+ z']     (residual_pointwise)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    activation, batchnorm2d_apply, conv2d, global_avg_pool, layernorm, linear, Activation,
    BatchNormState, ConvSpec, Mode, RunningUpdate, DEFAULT_EPS,
};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    BatchNorm,
    LayerNorm,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "batchnorm" | "bn" => Ok(NormKind::BatchNorm),
            "layernorm" | "ln" => Ok(NormKind::LayerNorm),
            other => Err(Error::Config(format!("unknown norm {other:?}"))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::BatchNorm => "batchnorm",
            NormKind::LayerNorm => "layernorm",
        })
    }
}

/// Architecture hyperparameters plus the ablation switches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width: channels of every feature map after the stem.
    pub hidden: usize,
    pub depth: usize,
    pub patch_size: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub residual_depthwise: bool,
    pub residual_pointwise: bool,
}

impl ModelConfig {
    /// ConvMixer-`hidden`/`depth` with GELU, BatchNorm and the depthwise
    /// residual only.
    pub fn new(
        hidden: usize,
        depth: usize,
        patch_size: usize,
        kernel_size: usize,
        in_channels: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            hidden,
            depth,
            patch_size,
            kernel_size,
            in_channels,
            num_classes,
            activation: Activation::Gelu,
            norm: NormKind::BatchNorm,
            residual_depthwise: true,
            residual_pointwise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden", self.hidden),
            ("patch_size", self.patch_size),
            ("kernel_size", self.kernel_size),
            ("in_channels", self.in_channels),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// ConvMixer-h/d name.
    pub fn name(&self) -> String {
        format!("ConvMixer-{}/{}", self.hidden, self.depth)
    }
}

/// Closed-form parameter count:
/// `h·[d·(k² + h + 6) + c_in·p² + n_classes + 3] + n_classes`.
///
/// LayerNorm carries the same two affine vectors per norm as BatchNorm, so
/// the count holds for both.
pub fn param_count(config: &ModelConfig) -> u64 {
    let h = config.hidden as u64;
    let d = config.depth as u64;
    let k = config.kernel_size as u64;
    let p = config.patch_size as u64;
    let c = config.in_channels as u64;
    let n = config.num_classes as u64;
    h * (d * (k * k + h + 6) + c * p * p + n + 3) + n
}

#[derive(Clone, Debug)]
pub enum Norm {
    Batch(BatchNormState),
    Layer {
        gamma: Tensor,
        beta: Tensor,
        eps: f32,
    },
}

impl Norm {
    fn new(kind: NormKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            NormKind::BatchNorm => Norm::Batch(BatchNormState::new(channels)?),
            NormKind::LayerNorm => Norm::Layer {
                gamma: Tensor::param(vec![1.0; channels], &[channels])?,
                beta: Tensor::param(vec![0.0; channels], &[channels])?,
                eps: DEFAULT_EPS,
            },
        })
    }

    fn apply(
        &self,
        x: &Tensor,
        mode: Mode,
        updates: &mut Vec<Option<RunningUpdate>>,
    ) -> Result<Tensor> {
        match self {
            Norm::Batch(state) => {
                let (y, update) = batchnorm2d_apply(x, state, mode)?;
                updates.push(update);
                Ok(y)
            }
            Norm::Layer { gamma, beta, eps } => {
                updates.push(None);
                layernorm(x, gamma, beta, *eps)
            }
        }
    }

    pub fn gamma(&self) -> &Tensor {
        match self {
            Norm::Batch(s) => &s.gamma,
            Norm::Layer { gamma, .. } => gamma,
        }
    }

    pub fn beta(&self) -> &Tensor {
        match self {
            Norm::Batch(s) => &s.beta,
            Norm::Layer { beta, .. } => beta,
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind)) {
        match self {
            Norm::Batch(s) => {
                f(
                    &format!("{prefix}.weight"),
                    &mut s.gamma,
                    TensorKind::Parameter,
                );
                f(
                    &format!("{prefix}.bias"),
                    &mut s.beta,
                    TensorKind::Parameter,
                );
                f(
                    &format!("{prefix}.running_mean"),
                    &mut s.running_mean,
                    TensorKind::Buffer,
                );
                f(
                    &format!("{prefix}.running_var"),
                    &mut s.running_var,
                    TensorKind::Buffer,
                );
            }
            Norm::Layer { gamma, beta, .. } => {
                f(&format!("{prefix}.weight"), gamma, TensorKind::Parameter);
                f(&format!("{prefix}.bias"), beta, TensorKind::Parameter);
            }
        }
    }
}

/// Convolution, activation, norm.
#[derive(Clone, Debug)]
pub struct ConvStage {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Norm,
}

impl ConvStage {
    fn new(spec: ConvSpec, norm: NormKind, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dims = spec.weight_dims();
        let fan_in = dims[1] * dims[2] * dims[3];
        Ok(Self {
            spec,
            weight: uniform_fan_in(&dims, fan_in, rng)?,
            bias: Tensor::param(vec![0.0; spec.out_channels], &[spec.out_channels])?,
            norm: Norm::new(norm, spec.out_channels)?,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        act: Activation,
        mode: Mode,
        updates: &mut Vec<Option<RunningUpdate>>,
    ) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, &self.bias, &self.spec)?;
        self.norm.apply(&activation(act, &y), mode, updates)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind)) {
        f(
            &format!("{prefix}.weight"),
            &mut self.weight,
            TensorKind::Parameter,
        );
        f(
            &format!("{prefix}.bias"),
            &mut self.bias,
            TensorKind::Parameter,
        );
        self.norm.visit(&format!("{prefix}.norm"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub depthwise: ConvStage,
    pub pointwise: ConvStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Trainable.
    Parameter,
    /// State such as BatchNorm running statistics.
    Buffer,
}

/// Shapes observed during one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub stem_dims: Vec<usize>,
    pub block_dims: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct ConvMixerModel {
    config: ModelConfig,
    pub stem: ConvStage,
    pub blocks: Vec<Block>,
    /// hidden × num_classes.
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
    mode: Mode,
}

fn uniform_fan_in(dims: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(data, dims)
}

impl ConvMixerModel {
    /// Builds a model with deterministic fan-in uniform initialization.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let stem = ConvStage::new(
            ConvSpec::patch_embedding(config.in_channels, h, config.patch_size)?,
            config.norm,
            &mut rng,
        )?;
        let blocks = (0..config.depth)
            .map(|_| {
                Ok(Block {
                    depthwise: ConvStage::new(
                        ConvSpec::depthwise(h, config.kernel_size)?,
                        config.norm,
                        &mut rng,
                    )?,
                    pointwise: ConvStage::new(ConvSpec::pointwise(h, h)?, config.norm, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let classifier_weight = uniform_fan_in(&[h, config.num_classes], h, &mut rng)?;
        let classifier_bias = Tensor::param(vec![0.0; config.num_classes], &[config.num_classes])?;
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            classifier_weight,
            classifier_bias,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Visits every named tensor in a fixed order.
    pub fn visit_tensors(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind)) {
        self.stem.visit("patch_embed", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.depthwise.visit(&format!("blocks.{i}.depthwise"), f);
            block.pointwise.visit(&format!("blocks.{i}.pointwise"), f);
        }
        f(
            "classifier.weight",
            &mut self.classifier_weight,
            TensorKind::Parameter,
        );
        f(
            "classifier.bias",
            &mut self.classifier_bias,
            TensorKind::Parameter,
        );
    }

    /// Parameters and buffers with their names, in visiting order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor, TensorKind)> {
        let mut out = Vec::new();
        // Visiting needs &mut only for the callback signature; tensors are
        // cloned handles.
        let mut copy = self.clone();
        copy.visit_tensors(&mut |name, t, kind| out.push((name.to_string(), t.clone(), kind)));
        out
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.named_tensors()
            .into_iter()
            .filter(|(_, _, kind)| *kind == TensorKind::Parameter)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> u64 {
        self.named_parameters()
            .iter()
            .map(|(_, t)| t.numel() as u64)
            .sum()
    }

    /// Replaces the tensor called `name`, keeping its shape and kind.
    pub fn set_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        let mut result = Err(Error::Checkpoint(format!("unknown tensor {name:?}")));
        self.visit_tensors(&mut |n, t, kind| {
            if n == name {
                result = if t.dims() != value.dims() {
                    Err(Error::ShapeMismatch {
                        op: "set_tensor",
                        lhs: t.dims().to_vec(),
                        rhs: value.dims().to_vec(),
                    })
                } else {
                    *t = value
                        .clone()
                        .with_requires_grad(kind == TensorKind::Parameter);
                    Ok(())
                };
            }
        });
        result
    }

    pub fn zero_grad(&mut self) {
        self.visit_tensors(&mut |_, t, _| t.zero_grad());
    }

    /// Forward pass in the current mode; train mode updates running
    /// statistics.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(batch)?.0)
    }

    pub fn forward_traced(&mut self, batch: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let mut updates = Vec::new();
        let mut trace = ForwardTrace::default();
        let logits = self.run(batch, self.mode, &mut updates, &mut trace)?;
        let mut pending = updates.into_iter();
        let mut apply = |norm: &mut Norm| {
            if let (Norm::Batch(state), Some(Some(update))) = (norm, pending.next()) {
                update.apply(state);
            }
        };
        apply(&mut self.stem.norm);
        for block in &mut self.blocks {
            apply(&mut block.depthwise.norm);
            apply(&mut block.pointwise.norm);
        }
        Ok((logits, trace))
    }

    /// Eval-mode logits without recording a graph; usable on a shared model.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        no_grad(|| {
            self.run(
                batch,
                Mode::Eval,
                &mut Vec::new(),
                &mut ForwardTrace::default(),
            )
        })
    }

    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        updates: &mut Vec<Option<RunningUpdate>>,
        trace: &mut ForwardTrace,
    ) -> Result<Tensor> {
        let cfg = &self.config;
        match batch.shape().nchw() {
            Some((_, c, h, w)) if c == cfg.in_channels => {
                if h < cfg.patch_size || w < cfg.patch_size {
                    return Err(Error::InputTooSmall {
                        op: "convmixer",
                        input: batch.dims().to_vec(),
                        kernel: cfg.patch_size,
                    });
                }
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "convmixer",
                    lhs: batch.dims().to_vec(),
                    rhs: vec![cfg.in_channels],
                })
            }
        }
        let act = cfg.activation;
        let mut z = self.stem.forward(batch, act, mode, updates)?;
        trace.stem_dims = z.dims().to_vec();
        for block in &self.blocks {
            let mut mixed = block.depthwise.forward(&z, act, mode, updates)?;
            if cfg.residual_depthwise {
                mixed = mixed.add(&z)?;
            }
            let mut next = block.pointwise.forward(&mixed, act, mode, updates)?;
            if cfg.residual_pointwise {
                next = next.add(&mixed)?;
            }
            trace.block_dims.push(next.dims().to_vec());
            z = next;
        }
        let pooled = global_avg_pool(&z)?;
        linear(&pooled, &self.classifier_weight, &self.classifier_bias)
    }
}
