//! Plain f64 re-implementation of every layer, written straight from the
//! layer definitions with nested loops. Used as the finite-difference oracle.

use std::cell::RefCell;

#[derive(Clone, Debug)]
pub struct R {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

thread_local! {
    /// Sign pattern of every ReLU input seen since the last `take_kinks`.
    static KINKS: RefCell<Vec<bool>> = const { RefCell::new(Vec::new()) };
}

pub fn take_kinks() -> Vec<bool> {
    KINKS.with(|k| std::mem::take(&mut *k.borrow_mut()))
}

impl R {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn from_f32(dims: &[usize], data: &[f32]) -> Self {
        Self::new(dims, data.iter().map(|&v| v as f64).collect())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(&self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let [_, n1, n2, n3] = [self.dims[0], self.dims[1], self.dims[2], self.dims[3]];
        self.data[((a * n1 + b) * n2 + c) * n3 + d]
    }
}

pub fn add(a: &R, b: &R) -> R {
    assert_eq!(a.dims, b.dims);
    R::new(
        &a.dims,
        a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    )
}

/// Same-padding placement: output extent ceil(n/s), leading pad half the
/// total (rounded down).
pub fn same_pad(n: usize, k: usize, s: usize) -> (usize, usize) {
    let out = n.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(n);
    (out, total / 2)
}

pub fn conv2d(x: &R, w: &R, bias: &R, stride: usize, groups: usize, same: bool) -> R {
    let (b, c, h, wd) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let (o, cg, k) = (w.dims[0], w.dims[1], w.dims[2]);
    assert_eq!(cg * groups, c);
    let og = o / groups;
    let (oh, top) = if same {
        same_pad(h, k, stride)
    } else {
        ((h - k) / stride + 1, 0)
    };
    let (ow, left) = if same {
        same_pad(wd, k, stride)
    } else {
        ((wd - k) / stride + 1, 0)
    };
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.data[oc];
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - top as isize;
                                let ix = (xx * stride + kx) as isize - left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at4(bi, g * cg + ci, iy as usize, ix as usize)
                                    * w.at4(oc, ci, ky, kx);
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    R::new(&[b, o, oh, ow], out)
}

pub fn gelu(x: &R) -> R {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    x.map(|v| 0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh()))
}

pub fn relu(x: &R) -> R {
    KINKS.with(|k| k.borrow_mut().extend(x.data.iter().map(|&v| v > 0.0)));
    x.map(|v| v.max(0.0))
}

pub fn batchnorm_train(x: &R, gamma: &R, beta: &R, eps: f64) -> R {
    let (b, c, h, w) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let n = (b * h * w) as f64;
    let mut out = x.clone();
    for ch in 0..c {
        let mut vals = Vec::new();
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    vals.push(x.at4(bi, ch, y, xx));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let i = ((bi * c + ch) * h + y) * w + xx;
                    out.data[i] = (x.data[i] - mean) * inv * gamma.data[ch] + beta.data[ch];
                }
            }
        }
    }
    out
}

/// Normalizes over channels independently at every (b, y, x).
pub fn layernorm_channels(x: &R, gamma: &R, beta: &R, eps: f64) -> R {
    let (b, c, h, w) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let mut out = x.clone();
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let vals: Vec<f64> = (0..c).map(|ch| x.at4(bi, ch, y, xx)).collect();
                let mean = vals.iter().sum::<f64>() / c as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for ch in 0..c {
                    let i = ((bi * c + ch) * h + y) * w + xx;
                    out.data[i] = (vals[ch] - mean) * inv * gamma.data[ch] + beta.data[ch];
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &R) -> R {
    let (b, c, h, w) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let plane = h * w;
    let data = x
        .data
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    R::new(&[b, c], data)
}

/// `x·W + b` with W stored F×K.
pub fn linear(x: &R, w: &R, bias: &R) -> R {
    let (b, f, k) = (x.dims[0], w.dims[0], w.dims[1]);
    let mut out = vec![0.0; b * k];
    for bi in 0..b {
        for j in 0..k {
            let mut acc = bias.data[j];
            for i in 0..f {
                acc += x.data[bi * f + i] * w.data[i * k + j];
            }
            out[bi * k + j] = acc;
        }
    }
    R::new(&[b, k], out)
}

/// Mean over rows of `−Σ t·log softmax(z)`.
pub fn softmax_ce(z: &R, t: &R) -> f64 {
    let (b, k) = (z.dims[0], z.dims[1]);
    let mut total = 0.0;
    for bi in 0..b {
        let row = &z.data[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for j in 0..k {
            total -= t.data[bi * k + j] * (row[j] - lse);
        }
    }
    total / b as f64
}

#[derive(Clone, Copy, Debug)]
pub struct RefModel {
    pub patch: usize,
    pub kernel: usize,
    pub depth: usize,
    pub gelu: bool,
    pub batchnorm: bool,
    pub residual_depthwise: bool,
    pub residual_pointwise: bool,
}

/// Logits of the isotropic patch-embedding mixer, looking parameters up by
/// name through `p`.
pub fn convmixer(cfg: RefModel, x: &R, p: &dyn Fn(&str) -> R) -> R {
    let act = |t: &R| if cfg.gelu { gelu(t) } else { relu(t) };
    let norm = |t: &R, prefix: &str| {
        let (g, b) = (
            p(&format!("{prefix}.norm.weight")),
            p(&format!("{prefix}.norm.bias")),
        );
        if cfg.batchnorm {
            batchnorm_train(t, &g, &b, 1e-5)
        } else {
            layernorm_channels(t, &g, &b, 1e-5)
        }
    };
    let stage = |t: &R, prefix: &str, stride: usize, groups: usize, same: bool| {
        let z = conv2d(
            t,
            &p(&format!("{prefix}.weight")),
            &p(&format!("{prefix}.bias")),
            stride,
            groups,
            same,
        );
        norm(&act(&z), prefix)
    };
    let mut z = stage(x, "patch_embed", cfg.patch, 1, false);
    let h = z.dims[1];
    for i in 0..cfg.depth {
        let mut m = stage(&z, &format!("blocks.{i}.depthwise"), 1, h, true);
        if cfg.residual_depthwise {
            m = add(&m, &z);
        }
        let mut out = stage(&m, &format!("blocks.{i}.pointwise"), 1, 1, true);
        if cfg.residual_pointwise {
            out = add(&out, &m);
        }
        z = out;
    }
    linear(
        &global_avg_pool(&z),
        &p("classifier.weight"),
        &p("classifier.bias"),
    )
}
