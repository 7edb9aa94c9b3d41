//! Invariant properties, each run as 100 seeded proptest trials.

use proptest::prelude::*;
use proptest::test_runner::{RngSeed, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::uniform;
use convmixer::augment::{self, cutmix, mix_batch, mixup, AugmentConfig, SoftLabel};
use convmixer::data::{encode_record, parse_records, LabeledImage, RECORD_BYTES};
use convmixer::harness::{Checkpoint, RunConfig};
use convmixer::model::{param_count, ConvMixerModel, ModelConfig, NormKind};
use convmixer::nn::{self, Activation, BatchNormState, ConvSpec, Mode, Padding};
use convmixer::optim::{
    adamw_step, clip_grad_global_norm, lr_at, AdamWConfig, OptimizerState, ScheduleConfig,
};
use convmixer::Tensor;

pub type Outcome = Result<(), String>;

/// 100 trials from a fixed seed.
pub fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 100,
        rng_seed: RngSeed::Fixed(0x00c0_ffee),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn tensor(dims: &[usize], seed: u64) -> Tensor {
    Tensor::new(uniform(dims.iter().product(), seed), dims).unwrap()
}

fn conv(x: &Tensor, spec: &ConvSpec, seed: u64) -> Tensor {
    let w = tensor(&spec.weight_dims(), seed);
    let b = tensor(&[spec.out_channels], seed + 1);
    nn::conv2d(x, &w, &b, spec).unwrap()
}

fn random_label(n: usize, seed: u64) -> SoftLabel {
    let raw: Vec<f32> = uniform(n, seed)
        .into_iter()
        .map(|v| v.abs() + 1e-3)
        .collect();
    let sum: f32 = raw.iter().sum();
    let probs: Vec<f32> = raw.iter().map(|v| v / sum).collect();
    let fix = 1.0 - probs.iter().sum::<f32>();
    let mut probs = probs;
    probs[0] += fix;
    SoftLabel::new(probs).unwrap()
}

fn check_distribution(y: &SoftLabel) -> Result<(), TestCaseError> {
    let sum: f64 = y.probs().iter().map(|&p| p as f64).sum();
    prop_assert!((sum - 1.0).abs() <= 1e-5, "sum {}", sum);
    prop_assert!(y.probs().iter().all(|&p| (0.0..=1.0 + 1e-6).contains(&p)));
    Ok(())
}

pub fn depthwise_channel_isolation(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                1usize..6,
                3usize..9,
                3usize..9,
                1usize..6,
                0usize..6,
                any::<u64>(),
            ),
            |(c, h, w, k, ch, seed)| {
                let ch = ch % c;
                let spec = ConvSpec::depthwise(c, k).unwrap();
                let x = tensor(&[2, c, h, w], seed);
                let mut bumped = x.to_vec();
                for b in 0..2 {
                    for i in 0..h * w {
                        bumped[(b * c + ch) * h * w + i] += 0.5;
                    }
                }
                let x2 = Tensor::new(bumped, x.dims()).unwrap();
                let (y1, y2) = (conv(&x, &spec, seed ^ 1), conv(&x2, &spec, seed ^ 1));
                let plane = h * w;
                for (i, (a, b)) in y1.data().iter().zip(y2.data()).enumerate() {
                    if (i / plane) % c != ch {
                        prop_assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn same_padding_preserves_extent(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                1usize..11,
                1usize..13,
                1usize..13,
                any::<bool>(),
                any::<u64>(),
            ),
            |(k, h, w, depthwise, seed)| {
                let spec = if depthwise {
                    ConvSpec::depthwise(3, k).unwrap()
                } else {
                    ConvSpec::new(3, 4, k, 1, 1, Padding::Same).unwrap()
                };
                let y = conv(&tensor(&[1, 3, h, w], seed), &spec, seed);
                prop_assert_eq!(y.dims(), &[1, spec.out_channels, h, w]);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn pointwise_conv_is_a_matmul(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                1usize..3,
                1usize..7,
                1usize..7,
                1usize..6,
                1usize..6,
                any::<u64>(),
            ),
            |(b, ci, co, h, w, seed)| {
                let spec = ConvSpec::pointwise(ci, co).unwrap();
                let x = tensor(&[b, ci, h, w], seed);
                let weight = tensor(&[co, ci, 1, 1], seed + 7);
                let bias = tensor(&[co], seed + 8);
                let y = nn::conv2d(&x, &weight, &bias, &spec).unwrap();
                let plane = h * w;
                // Positions as rows: (b·h·w) × ci times ci × co.
                let mut rows = vec![0.0; b * plane * ci];
                for bi in 0..b {
                    for c in 0..ci {
                        for i in 0..plane {
                            rows[(bi * plane + i) * ci + c] = x.data()[(bi * ci + c) * plane + i];
                        }
                    }
                }
                let mut wt = vec![0.0; ci * co];
                for o in 0..co {
                    for c in 0..ci {
                        wt[c * co + o] = weight.data()[o * ci + c];
                    }
                }
                let prod = Tensor::new(rows, &[b * plane, ci])
                    .unwrap()
                    .matmul(&Tensor::new(wt, &[ci, co]).unwrap())
                    .unwrap();
                for bi in 0..b {
                    for o in 0..co {
                        for i in 0..plane {
                            let expect = prod.data()[(bi * plane + i) * co + o] + bias.data()[o];
                            let got = y.data()[(bi * co + o) * plane + i];
                            prop_assert!((got - expect).abs() <= 1e-5 * (1.0 + expect.abs()));
                        }
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn batchnorm_train_statistics(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                2usize..4,
                1usize..5,
                3usize..7,
                3usize..7,
                0.5f32..10.0,
                -5.0f32..5.0,
                any::<u64>(),
            ),
            |(b, c, h, w, scale, shift, seed)| {
                let data: Vec<f32> = uniform(b * c * h * w, seed)
                    .into_iter()
                    .map(|v| v * scale + shift)
                    .collect();
                let x = Tensor::new(data, &[b, c, h, w]).unwrap();
                let mut state = BatchNormState::new(c).unwrap();
                let y = nn::batchnorm2d(&x, &mut state, Mode::Train).unwrap();
                let plane = h * w;
                let n = (b * plane) as f64;
                for ch in 0..c {
                    let vals: Vec<f64> = (0..b)
                        .flat_map(|bi| {
                            y.data()[(bi * c + ch) * plane..(bi * c + ch + 1) * plane]
                                .iter()
                                .map(|&v| v as f64)
                        })
                        .collect();
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!(mean.abs() < 1e-4, "mean {}", mean);
                    prop_assert!((var - 1.0).abs() < 1e-3, "var {}", var);
                }
                prop_assert!(state.running_var.data().iter().all(|&v| v >= 0.0));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn soft_labels_survive_mixing(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                2usize..12,
                prop::collection::vec((any::<bool>(), 0.0f32..=1.0), 1..8),
                any::<u64>(),
            ),
            |(n, ops, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut x = tensor(&[3, 8, 8], seed);
                let mut y = random_label(n, seed + 1);
                for (i, (use_cutmix, lambda)) in ops.into_iter().enumerate() {
                    let other = tensor(&[3, 8, 8], seed + 10 + i as u64);
                    let other_y = if i % 2 == 0 {
                        SoftLabel::one_hot(i % n, n).unwrap()
                    } else {
                        random_label(n, seed + 20 + i as u64)
                    };
                    (x, y) = if use_cutmix {
                        let (x, y, _) = cutmix(&x, &other, &y, &other_y, lambda, &mut rng).unwrap();
                        (x, y)
                    } else {
                        mixup(&x, &other, &y, &other_y, lambda).unwrap()
                    };
                    check_distribution(&y)?;
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn batch_mixing_keeps_distributions(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(1usize..7, 2usize..10, any::<u64>()),
            |(batch, n, seed)| {
                let images: Vec<Tensor> = (0..batch)
                    .map(|i| tensor(&[3, 6, 6], seed + i as u64))
                    .collect();
                let labels: Vec<SoftLabel> = (0..batch)
                    .map(|i| SoftLabel::one_hot(i % n, n).unwrap())
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (xs, ys) =
                    mix_batch(&images, &labels, &AugmentConfig::default(), &mut rng).unwrap();
                prop_assert_eq!(xs.len(), batch);
                for y in &ys {
                    check_distribution(y)?;
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn clipped_norm_is_bounded(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                prop::collection::vec(1usize..50, 1..6),
                1e-4f32..1e4,
                1e-3f32..10.0,
                any::<u64>(),
            ),
            |(sizes, scale, max_norm, seed)| {
                let mut grads: Vec<Vec<f32>> = sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        uniform(s, seed + i as u64)
                            .into_iter()
                            .map(|v| v * scale)
                            .collect()
                    })
                    .collect();
                let before: Vec<Vec<f32>> = grads.clone();
                let pre = clip_grad_global_norm(&mut grads, max_norm);
                let post = grads
                    .iter()
                    .flatten()
                    .map(|&v| (v as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                prop_assert!(
                    post <= max_norm as f64 + 1e-6,
                    "post {} max {}",
                    post,
                    max_norm
                );
                if pre <= max_norm {
                    prop_assert_eq!(grads, before);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn schedule_is_symmetric_and_continuous(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(1u64..20_000, 0.0f64..=1.0, 1e-5f32..1.0),
            |(total, frac, peak)| {
                let sched = ScheduleConfig {
                    total_steps: total,
                    lr_peak: peak,
                };
                let t = ((total as f64) * frac).floor() as u64;
                let a = lr_at(t, &sched).unwrap();
                prop_assert_eq!(a.to_bits(), lr_at(total - t, &sched).unwrap().to_bits());
                prop_assert!((0.0..=peak).contains(&a));
                if t < total {
                    let step = (lr_at(t + 1, &sched).unwrap() - a).abs();
                    prop_assert!(
                        step as f64 <= 2.0 * peak as f64 / total as f64 * (1.0 + 1e-5) + 1e-7
                    );
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn decay_without_gradient_is_geometric(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(1usize..6, 0.0f32..0.5, 1e-4f32..0.5, any::<u64>()),
            |(steps, wd, lr, seed)| {
                let theta0 = uniform(16, seed);
                let mut p = Tensor::param(theta0.clone(), &[4, 4]).unwrap();
                let mut state = OptimizerState::default();
                let cfg = AdamWConfig {
                    weight_decay: wd,
                    ..AdamWConfig::default()
                };
                let mut expect: Vec<f32> = theta0;
                for _ in 0..steps {
                    adamw_step(&mut [&mut p], &[vec![0.0; 16]], &mut state, &cfg, lr).unwrap();
                    expect.iter_mut().for_each(|v| *v *= 1.0 - lr * wd);
                }
                for (a, b) in p.data().iter().zip(&expect) {
                    prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
                }
                prop_assert!(state.moments[0].v.iter().all(|&v| v >= 0.0));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn structural_count_matches_formula(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                8usize..=64,
                1usize..=6,
                1usize..=4,
                prop::sample::select(vec![1usize, 3, 4, 9]),
                any::<bool>(),
                2usize..12,
            ),
            |(h, d, p, k, ln, n)| {
                let mut cfg = ModelConfig::new(h, d, p, k, 3, n);
                if ln {
                    cfg.norm = NormKind::LayerNorm;
                }
                let model = ConvMixerModel::build(&cfg, 0).unwrap();
                let structural: u64 = model
                    .named_parameters()
                    .iter()
                    .map(|(_, t)| t.numel() as u64)
                    .sum();
                prop_assert_eq!(structural, param_count(&cfg));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn cross_entropy_is_nonnegative(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(1usize..5, 2usize..9, 0.1f32..30.0, any::<u64>()),
            |(b, n, scale, seed)| {
                let logits: Vec<f32> = uniform(b * n, seed)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect();
                let mut targets = Vec::with_capacity(b * n);
                for i in 0..b {
                    targets.extend_from_slice(random_label(n, seed + 1 + i as u64).probs());
                }
                let loss = nn::softmax_cross_entropy(
                    &Tensor::new(logits, &[b, n]).unwrap(),
                    &Tensor::new(targets, &[b, n]).unwrap(),
                )
                .unwrap();
                prop_assert!(loss.item().unwrap() >= 0.0);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn augmented_images_stay_in_unit_range(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(4usize..20, 4usize..20, any::<u64>()),
            |(size, out, seed)| {
                let x = Tensor::new(
                    uniform(3 * size * size, seed)
                        .into_iter()
                        .map(|v| (v + 1.0) / 2.0)
                        .collect(),
                    &[3, size, size],
                )
                .unwrap();
                let cfg = AugmentConfig::default();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y = augment::augment_sample(&x, out, &cfg, &mut rng).unwrap();
                prop_assert_eq!(y.dims(), &[3, out, out]);
                prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
                let same = augment::augment_sample(&x, size, &AugmentConfig::disabled(), &mut rng)
                    .unwrap();
                prop_assert_eq!(same.data(), x.data());
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn cifar_record_round_trip(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(0u8..10, any::<u64>()), |(label, seed)| {
            let mut bytes = vec![label];
            bytes.extend(
                uniform(RECORD_BYTES - 1, seed)
                    .into_iter()
                    .map(|v| ((v + 1.0) * 127.9) as u8),
            );
            let parsed = parse_records(&bytes, "mem".as_ref()).unwrap();
            let back = encode_record(&LabeledImage {
                image: parsed[0].image.clone(),
                label: parsed[0].label,
            })
            .unwrap();
            prop_assert_eq!(back, bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn checkpoint_bytes_round_trip(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(
                1usize..6,
                0usize..3,
                1usize..4,
                any::<bool>(),
                any::<u64>(),
                any::<u64>(),
            ),
            |(h, d, k, relu, step, seed)| {
                let mut run = RunConfig {
                    model: ModelConfig::new(h, d, 1, k, 3, 4),
                    seed,
                    ..RunConfig::default()
                };
                if relu {
                    run.model.activation = Activation::Relu;
                }
                let model = ConvMixerModel::build(&run.model, seed).unwrap();
                let ck = Checkpoint::from_model(&run, &model, None, step, step / 7);
                let bytes = ck.to_bytes();
                let again = Checkpoint::from_bytes(&bytes).unwrap();
                prop_assert_eq!(again.to_bytes(), bytes);
                let rebuilt = again.to_model().unwrap();
                for ((n1, t1, _), (n2, t2, _)) in model
                    .named_tensors()
                    .iter()
                    .zip(rebuilt.named_tensors().iter())
                {
                    prop_assert_eq!(n1, n2);
                    let bits =
                        |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                    prop_assert_eq!(bits(t1), bits(t2));
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn eval_forward_is_bitwise_repeatable(runner: &mut TestRunner) -> Outcome {
    runner
        .run(
            &(2usize..9, 1usize..3, 1usize..5, any::<u64>()),
            |(h, d, k, seed)| {
                let cfg = ModelConfig::new(h, d, 2, k, 3, 5);
                let model = ConvMixerModel::build(&cfg, seed).unwrap();
                let x = tensor(&[2, 3, 6, 6], seed);
                let a = model.predict(&x).unwrap();
                let b = model.predict(&x).unwrap();
                prop_assert_eq!(a.data(), b.data());
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub type Property = fn(&mut TestRunner) -> Outcome;

pub const ALL: [(&str, Property); 15] = [
    ("depthwise_channel_isolation", depthwise_channel_isolation),
    (
        "same_padding_preserves_extent",
        same_padding_preserves_extent,
    ),
    ("pointwise_conv_is_a_matmul", pointwise_conv_is_a_matmul),
    ("batchnorm_train_statistics", batchnorm_train_statistics),
    ("soft_labels_survive_mixing", soft_labels_survive_mixing),
    (
        "batch_mixing_keeps_distributions",
        batch_mixing_keeps_distributions,
    ),
    ("clipped_norm_is_bounded", clipped_norm_is_bounded),
    (
        "schedule_is_symmetric_and_continuous",
        schedule_is_symmetric_and_continuous,
    ),
    (
        "decay_without_gradient_is_geometric",
        decay_without_gradient_is_geometric,
    ),
    (
        "structural_count_matches_formula",
        structural_count_matches_formula,
    ),
    ("cross_entropy_is_nonnegative", cross_entropy_is_nonnegative),
    (
        "augmented_images_stay_in_unit_range",
        augmented_images_stay_in_unit_range,
    ),
    ("cifar_record_round_trip", cifar_record_round_trip),
    ("checkpoint_bytes_round_trip", checkpoint_bytes_round_trip),
    (
        "eval_forward_is_bitwise_repeatable",
        eval_forward_is_bitwise_repeatable,
    ),
];
