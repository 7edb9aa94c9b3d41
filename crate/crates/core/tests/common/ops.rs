//! Finite-difference cases for every differentiable op, each checked
//! against an independent f64 reference.

use super::reference as rf;
use super::{gradcheck, probe, probe_ref, uniform, CheckReport, R};
use convmixer::nn::{self, Activation, BatchNormState, ConvAlgo, ConvSpec, Mode, Padding};
use convmixer::Tensor;

fn input(dims: &[usize], seed: u64) -> (Vec<usize>, Vec<f32>) {
    (dims.to_vec(), uniform(dims.iter().product(), seed))
}

pub fn sum_of_product() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let report = gradcheck(
        &[input(&[3, 3], 1), input(&[3, 3], 2)],
        |t| t[0].mul(&t[1]).unwrap().sum(),
        |r| r[0].data.iter().zip(&r[1].data).map(|(a, b)| a * b).sum(),
    );
    out.push(("sum(a*b)".to_string(), report));
    out
}

pub fn broadcast_elementwise() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    type Op = fn(&Tensor, &Tensor) -> Tensor;
    let ops: [(&str, Op, fn(f64, f64) -> f64); 3] = [
        ("add", |a, b| a.add(b).unwrap(), |a, b| a + b),
        ("sub", |a, b| a.sub(b).unwrap(), |a, b| a - b),
        ("mul", |a, b| a.mul(b).unwrap(), |a, b| a * b),
    ];
    for (name, f, g) in ops {
        let report = gradcheck(
            &[input(&[2, 3], 3), input(&[1, 3], 4)],
            |t| probe(&f(&t[0], &t[1]), 9),
            |r| {
                let y: Vec<f64> = (0..6).map(|i| g(r[0].data[i], r[1].data[i % 3])).collect();
                probe_ref(&R::new(&[2, 3], y), 9)
            },
        );
        out.push((name.to_string(), report));
    }
    out
}

pub fn matmul_scale_mean_reshape() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let report = gradcheck(
        &[input(&[3, 4], 5), input(&[4, 2], 6)],
        |t| {
            probe(
                &t[0]
                    .matmul(&t[1])
                    .unwrap()
                    .scale(0.5)
                    .reshape(&[2, 3])
                    .unwrap(),
                2,
            )
        },
        |r| {
            let mut y = vec![0.0; 6];
            for i in 0..3 {
                for j in 0..2 {
                    y[i * 2 + j] = 0.5
                        * (0..4)
                            .map(|k| r[0].data[i * 4 + k] * r[1].data[k * 2 + j])
                            .sum::<f64>();
                }
            }
            probe_ref(&R::new(&[2, 3], y), 2)
        },
    );
    out.push(("matmul".to_string(), report));
    let report = gradcheck(
        &[input(&[2, 5], 7)],
        |t| t[0].mean(),
        |r| r[0].data.iter().sum::<f64>() / 10.0,
    );
    out.push(("mean".to_string(), report));
    out
}

fn conv_case(
    name: &str,
    dims: &[usize],
    spec: ConvSpec,
    algo: ConvAlgo,
    post: Option<Activation>,
) -> (String, CheckReport) {
    let wd = spec.weight_dims();
    let same = spec.padding == Padding::Same;
    let report = gradcheck(
        &[
            input(dims, 11),
            input(&wd, 12),
            input(&[spec.out_channels], 13),
        ],
        |t| {
            let y = nn::conv2d_with(&t[0], &t[1], &t[2], &spec, algo).unwrap();
            let y = post.map_or(y.clone(), |a| nn::activation(a, &y));
            probe(&y, 14)
        },
        |r| {
            let y = rf::conv2d(&r[0], &r[1], &r[2], spec.stride, spec.groups, same);
            let y = match post {
                Some(Activation::Gelu) => rf::gelu(&y),
                Some(Activation::Relu) => rf::relu(&y),
                None => y,
            };
            probe_ref(&y, 14)
        },
    );
    (name.to_string(), report)
}

pub fn conv2d_all_kernels_and_layouts() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let cases = [
        (
            "dense k3",
            ConvSpec::new(4, 3, 3, 1, 1, Padding::Same).unwrap(),
        ),
        ("depthwise k3", ConvSpec::depthwise(4, 3).unwrap()),
        ("depthwise k4 (even)", ConvSpec::depthwise(4, 4).unwrap()),
        (
            "grouped k2",
            ConvSpec::new(4, 6, 2, 1, 2, Padding::Same).unwrap(),
        ),
        ("pointwise", ConvSpec::pointwise(4, 5).unwrap()),
        (
            "patch embed p2",
            ConvSpec::patch_embedding(4, 3, 2).unwrap(),
        ),
        (
            "strided same k3",
            ConvSpec::new(4, 2, 3, 2, 1, Padding::Same).unwrap(),
        ),
    ];
    for (name, spec) in cases {
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col, ConvAlgo::Auto] {
            out.push(conv_case(
                &format!("{name} {algo:?}"),
                &[1, 4, 6, 6],
                spec,
                algo,
                None,
            ));
        }
    }
    out
}

pub fn gelu_of_conv() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let spec = ConvSpec::new(2, 3, 3, 1, 1, Padding::Same).unwrap();
    out.push(conv_case(
        "gelu(conv)",
        &[1, 2, 5, 5],
        spec,
        ConvAlgo::Auto,
        Some(Activation::Gelu),
    ));
    out.push(conv_case(
        "relu(conv)",
        &[1, 2, 5, 5],
        spec,
        ConvAlgo::Auto,
        Some(Activation::Relu),
    ));
    out
}

pub fn activations() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    for (name, kind) in [("gelu", Activation::Gelu), ("relu", Activation::Relu)] {
        let report = gradcheck(
            &[input(&[1, 4, 6, 6], 21)],
            |t| probe(&nn::activation(kind, &t[0]), 22),
            |r| {
                let y = if kind == Activation::Gelu {
                    rf::gelu(&r[0])
                } else {
                    rf::relu(&r[0])
                };
                probe_ref(&y, 22)
            },
        );
        out.push((name.to_string(), report));
    }
    out
}

pub fn batchnorm_train_mode() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    for dims in [[1, 4, 6, 6], [3, 2, 3, 3]] {
        let c = dims[1];
        let report = gradcheck(
            &[input(&dims, 31), input(&[c], 32), input(&[c], 33)],
            |t| {
                let mut state = BatchNormState::new(c).unwrap();
                state.gamma = t[1].clone();
                state.beta = t[2].clone();
                probe(
                    &nn::batchnorm2d(&t[0], &mut state, Mode::Train).unwrap(),
                    34,
                )
            },
            |r| probe_ref(&rf::batchnorm_train(&r[0], &r[1], &r[2], 1e-5), 34),
        );
        out.push(("batchnorm".to_string(), report));
    }
    out
}

pub fn batchnorm_eval_mode() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let report = gradcheck(
        &[input(&[1, 4, 6, 6], 35), input(&[4], 36), input(&[4], 37)],
        |t| {
            let mut state = BatchNormState::new(4).unwrap();
            state.gamma = t[1].clone();
            state.beta = t[2].clone();
            state.running_mean = Tensor::new(vec![0.1, -0.2, 0.3, 0.0], &[4]).unwrap();
            state.running_var = Tensor::new(vec![0.5, 1.5, 2.0, 1.0], &[4]).unwrap();
            probe(&nn::batchnorm2d(&t[0], &mut state, Mode::Eval).unwrap(), 38)
        },
        |r| {
            let mean = [0.1f32, -0.2, 0.3, 0.0];
            let var = [0.5f32, 1.5, 2.0, 1.0];
            let mut y = r[0].clone();
            for (i, v) in y.data.iter_mut().enumerate() {
                let c = (i / 36) % 4;
                let inv = 1.0 / (var[c] as f64 + 1e-5).sqrt();
                *v = (*v - mean[c] as f64) * inv * r[1].data[c] + r[2].data[c];
            }
            probe_ref(&y, 38)
        },
    );
    out.push(("batchnorm eval".to_string(), report));
    out
}

pub fn layernorm_over_channels() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let report = gradcheck(
        &[input(&[1, 4, 6, 6], 41), input(&[4], 42), input(&[4], 43)],
        |t| probe(&nn::layernorm(&t[0], &t[1], &t[2], 1e-5).unwrap(), 44),
        |r| probe_ref(&rf::layernorm_channels(&r[0], &r[1], &r[2], 1e-5), 44),
    );
    out.push(("layernorm".to_string(), report));
    out
}

pub fn pool_and_linear() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let report = gradcheck(
        &[
            input(&[2, 4, 3, 3], 51),
            input(&[4, 5], 52),
            input(&[5], 53),
        ],
        |t| {
            let pooled = nn::global_avg_pool(&t[0]).unwrap();
            probe(&nn::linear(&pooled, &t[1], &t[2]).unwrap(), 54)
        },
        |r| probe_ref(&rf::linear(&rf::global_avg_pool(&r[0]), &r[1], &r[2]), 54),
    );
    out.push(("pool+linear".to_string(), report));
    out
}

pub fn softmax_cross_entropy_soft_targets() -> Vec<(String, CheckReport)> {
    let mut out = Vec::new();
    let targets = vec![0.2f32, 0.3, 0.5, 0.0, 1.0, 0.0, 0.25, 0.25, 0.5];
    let t_ref = R::from_f32(&[3, 3], &targets);
    let report = gradcheck(
        &[input(&[3, 3], 61)],
        |t| {
            nn::softmax_cross_entropy(&t[0], &Tensor::new(targets.clone(), &[3, 3]).unwrap())
                .unwrap()
        },
        |r| rf::softmax_ce(&r[0], &t_ref),
    );
    out.push(("softmax_ce".to_string(), report));
    out
}

pub fn all() -> Vec<(String, CheckReport)> {
    [
        sum_of_product,
        broadcast_elementwise,
        matmul_scale_mean_reshape,
        conv2d_all_kernels_and_layouts,
        gelu_of_conv,
        activations,
        batchnorm_train_mode,
        batchnorm_eval_mode,
        layernorm_over_channels,
        pool_and_linear,
        softmax_cross_entropy_soft_targets,
    ]
    .into_iter()
    .flat_map(|case| case())
    .collect()
}
