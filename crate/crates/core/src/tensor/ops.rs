use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};
use crate::kernels::{gemm, MatRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    #[inline]
    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Maps each flat index of `target` to the flat index of `source`, where
/// `source` has extent 1 on the broadcast axes.
fn broadcast_index(source: &Shape, target: &Shape) -> Vec<usize> {
    let src_strides = source.strides();
    let eff: Vec<usize> = source
        .dims()
        .iter()
        .zip(&src_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let dims = target.dims();
    let mut counter = vec![0usize; dims.len()];
    let mut out = Vec::with_capacity(target.numel());
    let mut offset = 0usize;
    for _ in 0..target.numel() {
        out.push(offset);
        for axis in (0..dims.len()).rev() {
            counter[axis] += 1;
            offset += eff[axis];
            if counter[axis] < dims[axis] {
                break;
            }
            offset -= eff[axis] * dims[axis];
            counter[axis] = 0;
        }
    }
    out
}

struct ElementwiseBackward {
    op: BinaryOp,
    parents: [Tensor; 2],
    /// `None` when the shapes are equal.
    b_index: Option<Vec<usize>>,
}

impl GradFn for ElementwiseBackward {
    fn name(&self) -> &'static str {
        self.op.name()
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let [a, b] = &self.parents;
        let b_at = |i: usize| self.b_index.as_ref().map_or(i, |idx| idx[i]);
        let grad_a = needs[0].then(|| match self.op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => g
                .iter()
                .enumerate()
                .map(|(i, &gi)| gi * b.data()[b_at(i)])
                .collect(),
        });
        let grad_b = needs[1].then(|| {
            let mut gb = vec![0.0f32; b.numel()];
            for (i, &gi) in g.iter().enumerate() {
                let contrib = match self.op {
                    BinaryOp::Add => gi,
                    BinaryOp::Sub => -gi,
                    BinaryOp::Mul => gi * a.data()[i],
                };
                gb[b_at(i)] += contrib;
            }
            gb
        });
        vec![grad_a, grad_b]
    }
}

/// `a op b` elementwise. `b` may have extent 1 on any axis of `a`'s shape.
pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: op.name(),
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
    };
    let b_index = if a.shape() == b.shape() {
        None
    } else if b.shape().broadcasts_to(a.shape()) {
        Some(broadcast_index(b.shape(), a.shape()))
    } else {
        return Err(mismatch());
    };
    let data: Vec<f32> = match &b_index {
        None => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| op.apply(x, y))
            .collect(),
        Some(idx) => a
            .data()
            .iter()
            .zip(idx)
            .map(|(&x, &j)| op.apply(x, b.data()[j]))
            .collect(),
    };
    Ok(Tensor::from_op(
        a.shape().clone(),
        data,
        ElementwiseBackward {
            op,
            parents: [a.clone(), b.clone()],
            b_index,
        },
    ))
}

struct MatmulBackward {
    parents: [Tensor; 2],
    m: usize,
    k: usize,
    n: usize,
}

impl GradFn for MatmulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let [a, b] = &self.parents;
        let grad_a = needs[0].then(|| {
            let mut ga = vec![0.0; m * k];
            gemm(
                m,
                n,
                k,
                1.0,
                MatRef::rows(g, n),
                MatRef::transposed(b.data(), n),
                0.0,
                &mut ga,
            );
            ga
        });
        let grad_b = needs[1].then(|| {
            let mut gb = vec![0.0; k * n];
            gemm(
                k,
                m,
                n,
                1.0,
                MatRef::transposed(a.data(), k),
                MatRef::rows(g, n),
                0.0,
                &mut gb,
            );
            gb
        });
        vec![grad_a, grad_b]
    }
}

/// Matrix product of an m×k and a k×n tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, k2, n) = match (a.dims(), b.dims()) {
        (&[m, k], &[k2, n]) => (m, k, k2, n),
        _ => (0, 1, 0, 1),
    };
    if k != k2 || m == 0 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        MatRef::rows(a.data(), k),
        MatRef::rows(b.data(), n),
        0.0,
        &mut out,
    );
    Ok(Tensor::from_op(
        Shape::new(vec![m, n])?,
        out,
        MatmulBackward {
            parents: [a.clone(), b.clone()],
            m,
            k,
            n,
        },
    ))
}

struct ScaledSumBackward {
    parents: [Tensor; 1],
    scale: f32,
}

impl GradFn for ScaledSumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| vec![g[0] * self.scale; self.parents[0].numel()])]
    }
}

struct ReshapeBackward {
    parents: [Tensor; 1],
}

impl GradFn for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| g.to_vec())]
    }
}

struct ScaleBackward {
    parents: [Tensor; 1],
    factor: f32,
}

impl GradFn for ScaleBackward {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| g.iter().map(|v| v * self.factor).collect())]
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Mul, self, other)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul(self, other)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, factor: f32) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().clone(),
            data,
            ScaleBackward {
                parents: [self.clone()],
                factor,
            },
        )
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().map(|&v| v as f64).sum();
        Tensor::from_op(
            Shape::scalar(),
            vec![total as f32],
            ScaledSumBackward {
                parents: [self.clone()],
                scale: 1.0,
            },
        )
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let total: f64 = self.data().iter().map(|&v| v as f64).sum();
        Tensor::from_op(
            Shape::scalar(),
            vec![(total / n) as f32],
            ScaledSumBackward {
                parents: [self.clone()],
                scale: (1.0 / n) as f32,
            },
        )
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.dims().to_vec(),
                rhs: dims.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            ReshapeBackward {
                parents: [self.clone()],
            },
        ))
    }
}
