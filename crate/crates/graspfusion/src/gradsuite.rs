//! The full gradient-check suite over seeded fixtures.
//!
//! Each differentiable operation is instantiated from a deterministic
//! ChaCha8 stream per seed and verified by central finite differences via
//! the adapters in `graspfusion_core::gradcheck`. Fixtures are
//! conditioned so no max-pool tie or ReLU kink sits within reach of the
//! FD step; conditioning rejects and redraws, which keeps the suite
//! deterministic for a given seed count.

use graspfusion_core::attention::{AsppConfig, CamParams, SamParams};
use graspfusion_core::gradcheck::{
    check_aspp, check_cam, check_channel_pool, check_combine, check_conv2d, check_dice_loss,
    check_focal_loss, check_global_pool, check_mask_loss, check_mlp2, check_relu, check_sam,
    check_sigmoid_map, check_smooth_l1, check_upsample_bilinear, GradCheckReport,
    GradCheckSettings,
};
use graspfusion_core::loss::{GridSpec, MaskBatch};
use graspfusion_core::ops::{conv2d, global_pool, CombineMode, ConvSpec, Mlp2Params, PoolMode};
use graspfusion_core::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Margin every kink must clear, two orders above the FD step.
const KINK_MARGIN: f64 = 0.05;

/// Result of one operation across all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Result of the whole suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub format_version: u32,
    pub passed: bool,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub step: f64,
    pub checks: Vec<OpReport>,
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

fn conv(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    k: usize,
    pad: usize,
    dil: usize,
) -> ConvSpec {
    let weights = tensor(rng, &[out_c, in_c, k, k], -1.0, 1.0);
    let bias: Vec<f64> = (0..out_c).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvSpec::new(out_c, (k, k), (pad, pad), (dil, dil), weights, bias).unwrap()
}

fn spatial_max_margin_ok(t: &Tensor) -> bool {
    let (c, h, w) = t.dims3().unwrap();
    (0..c).all(|ch| {
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
        h * w == 1 || top - second >= KINK_MARGIN
    })
}

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

fn mlp_margins_ok(input: &[f64], params: &Mlp2Params) -> bool {
    let (hidden_n, in_n) = (params.w1.shape()[0], params.w1.shape()[1]);
    (0..hidden_n).all(|j| {
        let row = &params.w1.data()[j * in_n..(j + 1) * in_n];
        let pre = params.b1.as_ref().map_or(0.0, |b| b[j])
            + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        pre.abs() >= KINK_MARGIN
    })
}

fn mlp(
    rng: &mut ChaCha8Rng,
    input_n: usize,
    hidden_n: usize,
    out_n: usize,
    bias: bool,
) -> Mlp2Params {
    Mlp2Params::new(
        tensor(rng, &[hidden_n, input_n], -1.0, 1.0),
        tensor(rng, &[out_n, hidden_n], -1.0, 1.0),
        bias.then(|| (0..hidden_n).map(|_| rng.random_range(-0.5..0.5)).collect()),
        bias.then(|| (0..out_n).map(|_| rng.random_range(-0.5..0.5)).collect()),
    )
    .unwrap()
}

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
        let act = graspfusion_core::ops::relu(&pre).unwrap();
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

struct OpCollector {
    checks: Vec<OpReport>,
}

impl OpCollector {
    fn run(
        &mut self,
        op: &str,
        seeds: u64,
        mut one: impl FnMut(&mut ChaCha8Rng) -> GradCheckReport,
    ) {
        let mut max_rel_error = 0.0f64;
        let mut passed = true;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = one(&mut rng);
            max_rel_error = max_rel_error.max(report.max_rel_error);
            passed &= report.passed;
        }
        self.checks.push(OpReport {
            op: op.to_string(),
            seeds,
            max_rel_error,
            passed,
        });
    }
}

/// Run every gradient check for `seeds` seeds per operation.
pub fn run_gradient_suite(seeds: u64) -> SuiteReport {
    let settings = GradCheckSettings::default();
    let mut c = OpCollector { checks: Vec::new() };

    c.run("conv2d", seeds, |rng| {
        let in_c = rng.random_range(1..=3);
        let out_c = rng.random_range(1..=3);
        let h = rng.random_range(3..=6);
        let w = rng.random_range(3..=6);
        let menu = [(1usize, 0usize, 1usize), (3, 1, 1), (3, 2, 2)];
        let (k, pad, dil) = menu[rng.random_range(0..menu.len())];
        let input = tensor(rng, &[in_c, h, w], -1.0, 1.0);
        let spec = conv(rng, out_c, in_c, k, pad, dil);
        let (oh, ow) = spec.output_size((h, w)).unwrap();
        let upstream = tensor(rng, &[out_c, oh, ow], -1.0, 1.0);
        check_conv2d(&input, &spec, &upstream, &settings)
    });

    c.run("global_pool_avg", seeds, |rng| {
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        ];
        let input = tensor(rng, &shape, -1.0, 1.0);
        let upstream = tensor(rng, &[shape[0], 1, 1], -1.0, 1.0);
        check_global_pool(&input, PoolMode::Avg, &upstream, &settings)
    });

    c.run("global_pool_max", seeds, |rng| {
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        ];
        let input = loop {
            let t = tensor(rng, &shape, -1.0, 1.0);
            if spatial_max_margin_ok(&t) {
                break t;
            }
        };
        let upstream = tensor(rng, &[shape[0], 1, 1], -1.0, 1.0);
        check_global_pool(&input, PoolMode::Max, &upstream, &settings)
    });

    c.run("channel_pool", seeds, |rng| {
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let input = loop {
            let t = tensor(rng, &shape, -1.0, 1.0);
            if channel_max_margin_ok(&t) {
                break t;
            }
        };
        let upstream = tensor(rng, &[2, shape[1], shape[2]], -1.0, 1.0);
        check_channel_pool(&input, &upstream, &settings)
    });

    c.run("mlp2", seeds, |rng| {
        let input_n = rng.random_range(1..=5);
        let hidden_n = rng.random_range(1..=4);
        let out_n = rng.random_range(1..=5);
        let bias = rng.random_bool(0.5);
        let (input, params) = loop {
            let params = mlp(rng, input_n, hidden_n, out_n, bias);
            let input: Vec<f64> = (0..input_n).map(|_| rng.random_range(-1.0..1.0)).collect();
            if mlp_margins_ok(&input, &params) {
                break (input, params);
            }
        };
        let upstream: Vec<f64> = (0..out_n).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_mlp2(&input, &params, &upstream, &settings)
    });

    c.run("sigmoid", seeds, |rng| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let input = tensor(rng, &shape, -4.0, 4.0);
        let upstream = tensor(rng, &shape, -1.0, 1.0);
        check_sigmoid_map(&input, &upstream, &settings)
    });

    c.run("relu", seeds, |rng| {
        let shape = [2, 3, 3];
        let data: Vec<f64> = (0..18)
            .map(|_| {
                let mag: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let input = Tensor::new(&shape, data).unwrap();
        let upstream = tensor(rng, &shape, -1.0, 1.0);
        check_relu(&input, &upstream, &settings)
    });

    c.run("combine_add", seeds, |rng| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let a = tensor(rng, &shape, -1.0, 1.0);
        let b = tensor(rng, &shape, -1.0, 1.0);
        let upstream = tensor(rng, &shape, -1.0, 1.0);
        check_combine(&a, &b, CombineMode::Add, &upstream, &settings)
    });

    c.run("combine_mul_channel", seeds, |rng| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let a = tensor(rng, &shape, -1.0, 1.0);
        let scale = tensor(rng, &[shape[0], 1, 1], 0.1, 0.9);
        let upstream = tensor(rng, &shape, -1.0, 1.0);
        check_combine(&a, &scale, CombineMode::MulBroadcast, &upstream, &settings)
    });

    c.run("combine_mul_spatial", seeds, |rng| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let a = tensor(rng, &shape, -1.0, 1.0);
        let scale = tensor(rng, &[1, shape[1], shape[2]], 0.1, 0.9);
        let upstream = tensor(rng, &shape, -1.0, 1.0);
        check_combine(&a, &scale, CombineMode::MulBroadcast, &upstream, &settings)
    });

    c.run("combine_concat", seeds, |rng| {
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let ca = rng.random_range(1..=3);
        let cb = rng.random_range(1..=3);
        let a = tensor(rng, &[ca, h, w], -1.0, 1.0);
        let b = tensor(rng, &[cb, h, w], -1.0, 1.0);
        let upstream = tensor(rng, &[ca + cb, h, w], -1.0, 1.0);
        check_combine(&a, &b, CombineMode::ConcatChannels, &upstream, &settings)
    });

    c.run("upsample_bilinear", seeds, |rng| {
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        let target = (rng.random_range(1..=6), rng.random_range(1..=6));
        let input = tensor(rng, &shape, -1.0, 1.0);
        let upstream = tensor(rng, &[shape[0], target.0, target.1], -1.0, 1.0);
        check_upsample_bilinear(&input, target, &upstream, &settings)
    });

    c.run("cam", seeds, |rng| {
        let ch = rng.random_range(1..=4);
        let h = rng.random_range(2..=4);
        let w = rng.random_range(2..=4);
        let bias = rng.random_bool(0.5);
        let (f, params) = loop {
            let hidden = (ch / 2).max(1);
            let params = CamParams::new(mlp(rng, ch, hidden, ch, bias)).unwrap();
            let f = tensor(rng, &[ch, h, w], -1.0, 1.0);
            if !spatial_max_margin_ok(&f) {
                continue;
            }
            let gap = global_pool(&f, PoolMode::Avg).unwrap();
            let gmp = global_pool(&f, PoolMode::Max).unwrap();
            if mlp_margins_ok(gap.data(), &params.mlp) && mlp_margins_ok(gmp.data(), &params.mlp) {
                break (f, params);
            }
        };
        let upstream = tensor(rng, f.shape(), -1.0, 1.0);
        check_cam(&f, &params, &upstream, &settings)
    });

    c.run("sam", seeds, |rng| {
        let ch = rng.random_range(1..=3);
        let h = rng.random_range(1..=5);
        let w = rng.random_range(1..=5);
        let f = loop {
            let t = tensor(rng, &[ch, h, w], -1.0, 1.0);
            if channel_max_margin_ok(&t) {
                break t;
            }
        };
        let weights = tensor(rng, &[1, 2, 7, 7], -0.3, 0.3);
        let conv = ConvSpec::new(
            1,
            (7, 7),
            (3, 3),
            (1, 1),
            weights,
            vec![rng.random_range(-0.3..0.3)],
        )
        .unwrap();
        let upstream = tensor(rng, f.shape(), -1.0, 1.0);
        check_sam(&f, &SamParams::new(conv).unwrap(), &upstream, &settings)
    });

    c.run("aspp", seeds, |rng| {
        let in_c = rng.random_range(1..=3);
        let branch_c = rng.random_range(1..=2);
        let out_c = rng.random_range(1..=2);
        let h = rng.random_range(3..=5);
        let w = rng.random_range(3..=5);
        let rates = if rng.random_bool(0.5) {
            vec![1, 2]
        } else {
            vec![2]
        };
        let include_pool = rng.random_bool(0.7);
        let (f, cfg) = loop {
            let mut branches = vec![conv(rng, branch_c, in_c, 1, 0, 1)];
            for &r in &rates {
                branches.push(conv(rng, branch_c, in_c, 3, r, r));
            }
            if include_pool {
                branches.push(conv(rng, branch_c, in_c, 1, 0, 1));
            }
            let n = branches.len();
            let fuse = conv(rng, out_c, n * branch_c, 1, 0, 1);
            let cfg =
                AsppConfig::new(branch_c, rates.clone(), include_pool, branches, fuse).unwrap();
            let f = tensor(rng, &[in_c, h, w], -1.0, 1.0);
            if aspp_margins_ok(&f, &cfg) {
                break (f, cfg);
            }
        };
        let upstream = tensor(rng, &[out_c, h, w], -1.0, 1.0);
        check_aspp(&f, &cfg, &upstream, &settings)
    });

    c.run("dice_loss", seeds, |rng| {
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let pred = tensor(rng, &[h, w], 0.1, 0.9);
        let target_data: Vec<f64> = (0..h * w)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let target = Tensor::new(&[h, w], target_data).unwrap();
        check_dice_loss(&pred, &target, 1e-6, &settings)
    });

    c.run("focal_loss", seeds, |rng| {
        let pred = rng.random_range(0.1..0.9);
        let target = rng.random_bool(0.5);
        let gamma = [0.0, 1.0, 2.0, 3.0][rng.random_range(0..4)];
        check_focal_loss(pred, target, 0.25, gamma, &settings)
    });

    c.run("smooth_l1", seeds, |rng| {
        let n = rng.random_range(1..=6);
        let pred: Vec<f64> = (0..n)
            .map(|_| {
                let mag: f64 = if rng.random_bool(0.5) {
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
        check_smooth_l1(&pred, &vec![0.0; n], &settings)
    });

    c.run("mask_loss", seeds, |rng| {
        let grid = GridSpec::new(2).unwrap();
        let cells = grid.cells();
        let preds: Vec<Tensor> = (0..cells).map(|_| tensor(rng, &[2, 2], 0.1, 0.9)).collect();
        let targets: Vec<Tensor> = (0..cells)
            .map(|_| {
                let data: Vec<f64> = (0..4)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(&[2, 2], data).unwrap()
            })
            .collect();
        let categories: Vec<u32> = (0..cells).map(|_| rng.random_range(0..3)).collect();
        let batch = MaskBatch::new(grid, preds, targets, categories).unwrap();
        check_mask_loss(&batch, 1e-6, &settings)
    });

    let passed = c.checks.iter().all(|r| r.passed);
    SuiteReport {
        format_version: crate::formats::FORMAT_VERSION,
        passed,
        rel_tol: settings.rel_tol,
        abs_floor: settings.abs_floor,
        step: settings.step,
        checks: c.checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_suite_passes() {
        let report = run_gradient_suite(3);
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checks.len(), 19);
        for check in &report.checks {
            assert!(check.passed, "{} failed: {}", check.op, check.max_rel_error);
            assert!(check.max_rel_error < report.rel_tol);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = run_gradient_suite(2);
        let b = run_gradient_suite(2);
        assert_eq!(a, b);
    }
}
