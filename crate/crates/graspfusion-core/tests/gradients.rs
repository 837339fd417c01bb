//! Finite-difference verification of every differentiable operation over
//! randomized instances, 24 seeds each.
//!
//! Instances are conditioned so that no kink sits within reach of the FD
//! step: max-pool top-2 gaps and ReLU pre-activation magnitudes must clear
//! a margin two orders above the step, otherwise the instance is
//! regenerated from a derived seed.

#![allow(clippy::needless_range_loop, clippy::int_plus_one)]

use graspfusion_core::attention::{AsppConfig, CamParams, SamParams};
use graspfusion_core::gradcheck::{
    check_aspp, check_cam, check_channel_pool, check_combine, check_conv2d, check_dice_loss,
    check_focal_loss, check_global_pool, check_mask_loss, check_mlp2, check_relu, check_sam,
    check_sigmoid_map, check_smooth_l1, check_upsample_bilinear, GradCheckReport,
    GradCheckSettings,
};
use graspfusion_core::loss::{GridSpec, MaskBatch};
use graspfusion_core::ops::{
    conv2d, global_pool, relu, CombineMode, ConvSpec, Mlp2Params, PoolMode,
};
use graspfusion_core::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 24;
const KINK_MARGIN: f64 = 0.05;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

fn settings() -> GradCheckSettings {
    GradCheckSettings::default()
}

fn assert_passed(op: &str, seed: u64, report: &GradCheckReport) {
    assert!(
        report.passed,
        "{op} seed {seed}: max_rel_error {} at element {} ({} elements, non_finite {:?})",
        report.max_rel_error, report.worst_index, report.elements, report.non_finite
    );
}

/// Per-channel top-2 spatial gap (for global max pooling).
fn spatial_max_margin_ok(t: &Tensor) -> bool {
    let (c, h, w) = t.dims3().unwrap();
    for ch in 0..c {
        let mut top = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                let v = t.at3(ch, y, x);
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
        }
        if h * w > 1 && top - second < KINK_MARGIN {
            return false;
        }
    }
    true
}

/// Per-pixel top-2 gap across channels (for channel max pooling).
fn channel_max_margin_ok(t: &Tensor) -> bool {
    let (c, h, w) = t.dims3().unwrap();
    if c == 1 {
        return true;
    }
    for y in 0..h {
        for x in 0..w {
            let mut top = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = t.at3(ch, y, x);
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
            if top - second < KINK_MARGIN {
                return false;
            }
        }
    }
    true
}

fn random_conv(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    k: usize,
    pad: usize,
    dil: usize,
) -> ConvSpec {
    let weights = random_tensor(rng, &[out_c, in_c, k, k], -1.0, 1.0);
    let bias: Vec<f64> = (0..out_c).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvSpec::new(out_c, (k, k), (pad, pad), (dil, dil), weights, bias).unwrap()
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let in_c = rng.random_range(1..=3);
        let out_c = rng.random_range(1..=3);
        let h = rng.random_range(3..=6);
        let w = rng.random_range(3..=6);
        let (k, pad, dil) = *[(1usize, 0usize, 1usize), (3, 0, 1), (3, 1, 1), (3, 2, 2)]
            .iter()
            .filter(|(k, pad, dil)| (k - 1) * dil + 1 <= h.min(w) + 2 * pad)
            .nth(rng.random_range(0..3))
            .unwrap();
        let input = random_tensor(&mut rng, &[in_c, h, w], -1.0, 1.0);
        let spec = random_conv(&mut rng, out_c, in_c, k, pad, dil);
        let (oh, ow) = spec.output_size((h, w)).unwrap();
        let upstream = random_tensor(&mut rng, &[out_c, oh, ow], -1.0, 1.0);
        assert_passed(
            "conv2d",
            seed,
            &check_conv2d(&input, &spec, &upstream, &settings()),
        );
    }
}

#[test]
fn global_pool_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        ];
        let input = loop {
            let t = random_tensor(&mut rng, &shape, -1.0, 1.0);
            if spatial_max_margin_ok(&t) {
                break t;
            }
        };
        let upstream = random_tensor(&mut rng, &[shape[0], 1, 1], -1.0, 1.0);
        assert_passed(
            "global_pool(avg)",
            seed,
            &check_global_pool(&input, PoolMode::Avg, &upstream, &settings()),
        );
        assert_passed(
            "global_pool(max)",
            seed,
            &check_global_pool(&input, PoolMode::Max, &upstream, &settings()),
        );
    }
}

#[test]
fn channel_pool_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let input = loop {
            let t = random_tensor(&mut rng, &shape, -1.0, 1.0);
            if channel_max_margin_ok(&t) {
                break t;
            }
        };
        let upstream = random_tensor(&mut rng, &[2, shape[1], shape[2]], -1.0, 1.0);
        assert_passed(
            "channel_pool",
            seed,
            &check_channel_pool(&input, &upstream, &settings()),
        );
    }
}

fn random_mlp(
    rng: &mut ChaCha8Rng,
    input_n: usize,
    hidden_n: usize,
    out_n: usize,
    bias: bool,
) -> Mlp2Params {
    Mlp2Params::new(
        random_tensor(rng, &[hidden_n, input_n], -1.0, 1.0),
        random_tensor(rng, &[out_n, hidden_n], -1.0, 1.0),
        bias.then(|| (0..hidden_n).map(|_| rng.random_range(-0.5..0.5)).collect()),
        bias.then(|| (0..out_n).map(|_| rng.random_range(-0.5..0.5)).collect()),
    )
    .unwrap()
}

fn mlp_hidden_margins_ok(input: &[f64], params: &Mlp2Params) -> bool {
    let (hidden_n, in_n) = (params.w1.shape()[0], params.w1.shape()[1]);
    for j in 0..hidden_n {
        let mut pre = params.b1.as_ref().map_or(0.0, |b| b[j]);
        for i in 0..in_n {
            pre += params.w1.data()[j * in_n + i] * input[i];
        }
        if pre.abs() < KINK_MARGIN {
            return false;
        }
    }
    true
}

#[test]
fn mlp2_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let input_n = rng.random_range(1..=5);
        let hidden_n = rng.random_range(1..=4);
        let out_n = rng.random_range(1..=5);
        let bias = seed % 2 == 0;
        let (input, params) = loop {
            let params = random_mlp(&mut rng, input_n, hidden_n, out_n, bias);
            let input: Vec<f64> = (0..input_n).map(|_| rng.random_range(-1.0..1.0)).collect();
            if mlp_hidden_margins_ok(&input, &params) {
                break (input, params);
            }
        };
        let upstream: Vec<f64> = (0..out_n).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_passed(
            "mlp2",
            seed,
            &check_mlp2(&input, &params, &upstream, &settings()),
        );
    }
}

#[test]
fn sigmoid_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let input = random_tensor(&mut rng, &shape, -4.0, 4.0);
        let upstream = random_tensor(&mut rng, &shape, -1.0, 1.0);
        assert_passed(
            "sigmoid_map",
            seed,
            &check_sigmoid_map(&input, &upstream, &settings()),
        );
    }
}

#[test]
fn relu_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let shape = [2, 3, 3];
        // keep every element clear of the kink
        let data: Vec<f64> = (0..18)
            .map(|_| {
                let mag = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let input = Tensor::new(&shape, data).unwrap();
        let upstream = random_tensor(&mut rng, &shape, -1.0, 1.0);
        assert_passed("relu", seed, &check_relu(&input, &upstream, &settings()));
    }
}

#[test]
fn combine_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let a = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);

        let b = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let upstream = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        assert_passed(
            "combine(add)",
            seed,
            &check_combine(&a, &b, CombineMode::Add, &upstream, &settings()),
        );

        let channel_scale = random_tensor(&mut rng, &[c, 1, 1], 0.1, 0.9);
        assert_passed(
            "combine(mul,channel)",
            seed,
            &check_combine(
                &a,
                &channel_scale,
                CombineMode::MulBroadcast,
                &upstream,
                &settings(),
            ),
        );

        let pixel_scale = random_tensor(&mut rng, &[1, h, w], 0.1, 0.9);
        assert_passed(
            "combine(mul,spatial)",
            seed,
            &check_combine(
                &a,
                &pixel_scale,
                CombineMode::MulBroadcast,
                &upstream,
                &settings(),
            ),
        );

        let extra = rng.random_range(1..=3);
        let b2 = random_tensor(&mut rng, &[extra, h, w], -1.0, 1.0);
        let up2 = random_tensor(&mut rng, &[c + extra, h, w], -1.0, 1.0);
        assert_passed(
            "combine(concat)",
            seed,
            &check_combine(&a, &b2, CombineMode::ConcatChannels, &up2, &settings()),
        );
    }
}

#[test]
fn upsample_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let target = (rng.random_range(1..=6), rng.random_range(1..=6));
        let input = random_tensor(&mut rng, &shape, -1.0, 1.0);
        let upstream = random_tensor(&mut rng, &[shape[0], target.0, target.1], -1.0, 1.0);
        assert_passed(
            "upsample_bilinear",
            seed,
            &check_upsample_bilinear(&input, target, &upstream, &settings()),
        );
    }
}

fn well_conditioned_cam(
    rng: &mut ChaCha8Rng,
    c: usize,
    h: usize,
    w: usize,
    bias: bool,
) -> (Tensor, CamParams) {
    loop {
        let hidden = (c / 2).max(1);
        let params = CamParams::new(random_mlp(rng, c, hidden, c, bias)).unwrap();
        let f = random_tensor(rng, &[c, h, w], -1.0, 1.0);
        if !spatial_max_margin_ok(&f) {
            continue;
        }
        let gap = global_pool(&f, PoolMode::Avg).unwrap();
        let gmp = global_pool(&f, PoolMode::Max).unwrap();
        if mlp_hidden_margins_ok(gap.data(), &params.mlp)
            && mlp_hidden_margins_ok(gmp.data(), &params.mlp)
        {
            return (f, params);
        }
    }
}

#[test]
fn cam_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let c = rng.random_range(1..=4);
        let h = rng.random_range(2..=4);
        let w = rng.random_range(2..=4);
        let (f, params) = well_conditioned_cam(&mut rng, c, h, w, seed % 2 == 0);
        let upstream = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        assert_passed("cam", seed, &check_cam(&f, &params, &upstream, &settings()));
    }
}

#[test]
fn sam_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(1..=5);
        let w = rng.random_range(1..=5);
        let f = loop {
            let t = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
            if channel_max_margin_ok(&t) {
                break t;
            }
        };
        let weights = random_tensor(&mut rng, &[1, 2, 7, 7], -0.3, 0.3);
        let conv = ConvSpec::new(
            1,
            (7, 7),
            (3, 3),
            (1, 1),
            weights,
            vec![rng.random_range(-0.3..0.3)],
        )
        .unwrap();
        let params = SamParams::new(conv).unwrap();
        let upstream = random_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        assert_passed("sam", seed, &check_sam(&f, &params, &upstream, &settings()));
    }
}

/// Every ReLU pre-activation in the ASPP forward must clear the margin.
fn aspp_margins_ok(f: &Tensor, cfg: &AsppConfig) -> bool {
    let (_, h, w) = f.dims3().unwrap();
    let pool_idx = cfg.include_image_pool().then(|| cfg.branches().len() - 1);
    let mut concat_data = Vec::new();
    for (idx, spec) in cfg.branches().iter().enumerate() {
        let pre = if Some(idx) == pool_idx {
            conv2d(&global_pool(f, PoolMode::Avg).unwrap(), spec).unwrap()
        } else {
            conv2d(f, spec).unwrap()
        };
        if pre.data().iter().any(|v| v.abs() < KINK_MARGIN) {
            return false;
        }
        let act = relu(&pre).unwrap();
        let full = if Some(idx) == pool_idx {
            graspfusion_core::ops::upsample_bilinear(&act, (h, w)).unwrap()
        } else {
            act
        };
        concat_data.extend_from_slice(full.data());
    }
    let concat = Tensor::new(
        &[cfg.branches().len() * cfg.branch_channels(), h, w],
        concat_data,
    )
    .unwrap();
    let fuse_pre = conv2d(&concat, cfg.fuse()).unwrap();
    fuse_pre.data().iter().all(|v| v.abs() >= KINK_MARGIN)
}

#[test]
fn aspp_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let in_c = rng.random_range(1..=3);
        let branch_c = rng.random_range(1..=2);
        let out_c = rng.random_range(1..=2);
        let h = rng.random_range(3..=5);
        let w = rng.random_range(3..=5);
        let rates = if seed % 2 == 0 { vec![1, 2] } else { vec![2] };
        let include_pool = seed % 3 != 0;
        let (f, cfg) = loop {
            let mut branches = vec![random_conv(&mut rng, branch_c, in_c, 1, 0, 1)];
            for &r in &rates {
                branches.push(random_conv(&mut rng, branch_c, in_c, 3, r, r));
            }
            if include_pool {
                branches.push(random_conv(&mut rng, branch_c, in_c, 1, 0, 1));
            }
            let n = branches.len();
            let fuse = random_conv(&mut rng, out_c, n * branch_c, 1, 0, 1);
            let cfg =
                AsppConfig::new(branch_c, rates.clone(), include_pool, branches, fuse).unwrap();
            let f = random_tensor(&mut rng, &[in_c, h, w], -1.0, 1.0);
            if aspp_margins_ok(&f, &cfg) {
                break (f, cfg);
            }
        };
        let upstream = random_tensor(&mut rng, &[out_c, h, w], -1.0, 1.0);
        assert_passed("aspp", seed, &check_aspp(&f, &cfg, &upstream, &settings()));
    }
}

#[test]
fn dice_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let pred = random_tensor(&mut rng, &[h, w], 0.1, 0.9);
        let target_data: Vec<f64> = (0..h * w)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let target = Tensor::new(&[h, w], target_data).unwrap();
        assert_passed(
            "dice_loss",
            seed,
            &check_dice_loss(&pred, &target, 1e-6, &settings()),
        );
    }
}

#[test]
fn focal_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let pred = rng.random_range(0.1..0.9);
        let target = rng.random_bool(0.5);
        let gamma = [0.0, 1.0, 2.0, 3.0][seed as usize % 4];
        assert_passed(
            "focal_loss",
            seed,
            &check_focal_loss(pred, target, 0.25, gamma, &settings()),
        );
    }
}

#[test]
fn smooth_l1_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let n = rng.random_range(1..=6);
        // residuals clear of the |d| = 1 kink
        let pred: Vec<f64> = (0..n)
            .map(|_| {
                let inner = rng.random_bool(0.5);
                let mag = if inner {
                    rng.random_range(0.0..0.8)
                } else {
                    rng.random_range(1.2..3.0)
                };
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let target = vec![0.0; n];
        assert_passed(
            "smooth_l1",
            seed,
            &check_smooth_l1(&pred, &target, &settings()),
        );
    }
}

#[test]
fn mask_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let grid = GridSpec::new(2).unwrap();
        let cells = grid.cells();
        let preds: Vec<Tensor> = (0..cells)
            .map(|_| random_tensor(&mut rng, &[2, 2], 0.1, 0.9))
            .collect();
        let targets: Vec<Tensor> = (0..cells)
            .map(|_| {
                let data: Vec<f64> = (0..4)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(&[2, 2], data).unwrap()
            })
            .collect();
        // include the all-background case once
        let categories: Vec<u32> = if seed == 0 {
            vec![0; cells]
        } else {
            (0..cells).map(|_| rng.random_range(0..3)).collect()
        };
        let batch = MaskBatch::new(grid, preds, targets, categories).unwrap();
        assert_passed(
            "mask_loss",
            seed,
            &check_mask_loss(&batch, 1e-6, &settings()),
        );
    }
}
