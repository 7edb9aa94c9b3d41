use crate::error::{Error, Result};
use crate::tensor::{GradFn, Shape, Tensor};

const TARGET_TOLERANCE: f64 = 1e-5;

/// Mean over the batch of `-Σ_k target_k · log softmax(logits)_k`.
///
/// `targets` are soft labels: every row must be a probability distribution.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (b, k) = match logits.dims() {
        &[b, k] if targets.dims() == [b, k] => (b, k),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: logits.dims().to_vec(),
                rhs: targets.dims().to_vec(),
            })
        }
    };
    let mut probs = vec![0.0f64; b * k];
    let mut total = 0.0f64;
    for (row, (z, t)) in logits
        .data()
        .chunks(k)
        .zip(targets.data().chunks(k))
        .enumerate()
    {
        let sum_t: f64 = t.iter().map(|&v| v as f64).sum();
        if t.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum_t - 1.0).abs() > TARGET_TOLERANCE {
            return Err(Error::InvalidTarget {
                row,
                sum: sum_t as f32,
            });
        }
        let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let denom: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_denom = denom.ln();
        for (j, (&zj, &tj)) in z.iter().zip(t).enumerate() {
            let log_p = zj as f64 - max - log_denom;
            probs[row * k + j] = log_p.exp();
            if tj > 0.0 {
                total -= tj as f64 * log_p;
            }
        }
    }
    Ok(Tensor::from_op(
        Shape::scalar(),
        vec![(total / b as f64) as f32],
        CrossEntropyBackward {
            parents: [logits.clone(), targets.clone()],
            probs,
            batch: b,
        },
    ))
}

struct CrossEntropyBackward {
    parents: [Tensor; 2],
    /// Kept in f64 so `p − t` does not cancel when p ≈ t.
    probs: Vec<f64>,
    batch: usize,
}

impl GradFn for CrossEntropyBackward {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let scale = g[0] as f64 / self.batch as f64;
        let targets = self.parents[1].data();
        let glogits = needs[0].then(|| {
            self.probs
                .iter()
                .zip(targets)
                .map(|(&p, &t)| ((p - t as f64) * scale) as f32)
                .collect()
        });
        // Targets are constants of the loss.
        vec![glogits, needs[1].then(|| vec![0.0; targets.len()])]
    }
}
