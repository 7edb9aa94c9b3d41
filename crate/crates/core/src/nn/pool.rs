use crate::error::{Error, Result};
use crate::kernels::{gemm, MatRef};
use crate::tensor::{GradFn, Shape, Tensor};

/// Mean over the spatial axes: B×C×H×W → B×C.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = input.shape().nchw().ok_or_else(|| Error::ShapeMismatch {
        op: "global_avg_pool",
        lhs: input.dims().to_vec(),
        rhs: vec![],
    })?;
    let plane = h * w;
    let out = input
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Ok(Tensor::from_op(
        Shape::new(vec![b, c])?,
        out,
        PoolBackward {
            parents: [input.clone()],
            plane,
        },
    ))
}

struct PoolBackward {
    parents: [Tensor; 1],
    plane: usize,
}

impl GradFn for PoolBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let scale = 1.0 / self.plane as f32;
        vec![needs[0].then(|| {
            g.iter()
                .flat_map(|&gv| std::iter::repeat_n(gv * scale, self.plane))
                .collect()
        })]
    }
}

/// `input · weight + bias` for input B×F, weight F×K, bias K.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, f, k) = match (input.dims(), weight.dims(), bias.dims()) {
        (&[b, f], &[f2, k], &[k2]) if f == f2 && k == k2 => (b, f, k),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: input.dims().to_vec(),
                rhs: weight.dims().to_vec(),
            })
        }
    };
    let mut out: Vec<f32> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(
        b,
        f,
        k,
        1.0,
        MatRef::rows(input.data(), f),
        MatRef::rows(weight.data(), k),
        1.0,
        &mut out,
    );
    Ok(Tensor::from_op(
        Shape::new(vec![b, k])?,
        out,
        LinearBackward {
            parents: [input.clone(), weight.clone(), bias.clone()],
            b,
            f,
            k,
        },
    ))
}

struct LinearBackward {
    parents: [Tensor; 3],
    b: usize,
    f: usize,
    k: usize,
}

impl GradFn for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn parents(&self) -> &[Tensor] {
        &self.parents
    }

    fn backward(&self, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (b, f, k) = (self.b, self.f, self.k);
        let [x, w, _] = &self.parents;
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; b * f];
            gemm(
                b,
                k,
                f,
                1.0,
                MatRef::rows(g, k),
                MatRef::transposed(w.data(), k),
                0.0,
                &mut gx,
            );
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; f * k];
            gemm(
                f,
                b,
                k,
                1.0,
                MatRef::transposed(x.data(), f),
                MatRef::rows(g, k),
                0.0,
                &mut gw,
            );
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![0.0f64; k];
            for row in g.chunks(k) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
            }
            gb.into_iter().map(|v| v as f32).collect()
        });
        vec![gx, gw, gb]
    }
}
