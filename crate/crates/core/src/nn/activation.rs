use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::{GradFn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        })
    }
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

#[inline]
fn gelu_derivative(x: f32) -> f32 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

const PAR_CHUNK: usize = 1 << 14;

pub fn activation(kind: Activation, input: &Tensor) -> Tensor {
    let mut out = vec![0.0f32; input.numel()];
    out.par_chunks_mut(PAR_CHUNK)
        .zip(input.data().par_chunks(PAR_CHUNK))
        .for_each(|(dst, src)| match kind {
            Activation::Gelu => dst
                .iter_mut()
                .zip(src)
                .for_each(|(d, &x)| *d = gelu_scalar(x)),
            Activation::Relu => dst.iter_mut().zip(src).for_each(|(d, &x)| *d = x.max(0.0)),
        });
    Tensor::from_op(
        input.shape().clone(),
        out,
        ActivationBackward {
            kind,
            parents: [input.clone()],
        },
    )
}

struct ActivationBackward {
    kind: Activation,
    parents: [Tensor; 1],
}

impl GradFn for ActivationBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = self.parents[0].data();
        vec![needs[0].then(|| {
            let mut gx = vec![0.0f32; g.len()];
            gx.par_chunks_mut(PAR_CHUNK)
                .zip(g.par_chunks(PAR_CHUNK))
                .zip(x.par_chunks(PAR_CHUNK))
                .for_each(|((dst, gs), xs)| {
                    for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                        *d = match self.kind {
                            Activation::Gelu => gv * gelu_derivative(xv),
                            Activation::Relu => {
                                if xv > 0.0 {
                                    gv
                                } else {
                                    0.0
                                }
                            }
                        };
                    }
                });
            gx
        })]
    }
}
