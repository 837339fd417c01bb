//! Central finite-difference verification of analytic gradients.
//!
//! [`grad_check`] compares a vector–Jacobian product against central
//! differences of the scalar projection `L(x) = Σ upstream·forward(x)`,
//! element by element, and reports the maximum relative error. The
//! `check_*` adapters flatten each operation's inputs and parameters into
//! the checked vector so one harness covers every differentiable kernel,
//! the three attention modules, and the losses.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{
    aspp_backward, aspp_forward, cam_backward, cam_forward, sam_backward, sam_forward, AsppConfig,
    CamParams, SamParams,
};
use crate::loss::{
    dice_loss, dice_loss_backward, focal_loss, focal_loss_backward, mask_loss, mask_loss_backward,
    smooth_l1, smooth_l1_backward, MaskBatch,
};
use crate::ops::{
    channel_pool, channel_pool_backward, combine, combine_backward, conv2d, conv2d_backward,
    global_pool, global_pool_backward, mlp2, mlp2_backward, relu, relu_backward, sigmoid_map,
    sigmoid_map_backward, upsample_bilinear, upsample_bilinear_backward, CombineMode, ConvSpec,
    Mlp2Params, PoolMode,
};
use crate::tensor::{Tensor, TensorError};

/// Finite-difference step and pass thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub rel_tol: f64,
    /// Absolute floor on the relative-error denominator.
    pub abs_floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked elements.
    pub max_rel_error: f64,
    /// Element index of that largest error.
    pub worst_index: usize,
    /// Number of elements checked.
    pub elements: usize,
    /// Flat index at which a non-finite value appeared, if any.
    pub non_finite: Option<usize>,
    pub passed: bool,
}

impl GradCheckReport {
    fn failure(non_finite: Option<usize>) -> Self {
        Self {
            max_rel_error: f64::INFINITY,
            worst_index: 0,
            elements: 0,
            non_finite,
            passed: false,
        }
    }
}

fn err_location(e: &TensorError) -> Option<usize> {
    match e {
        TensorError::NonFinite { index } => Some(*index),
        _ => None,
    }
}

/// Compare an analytic VJP against central finite differences.
///
/// `forward` maps the flat point to flat outputs; `vjp` maps
/// (point, upstream) to the gradient of `Σ upstream·forward` with respect
/// to the point. The relative error of element i is
/// `|a − n| / max(|a| + |n|, abs_floor)`.
pub fn grad_check(
    point: &[f64],
    upstream: &[f64],
    forward: impl Fn(&[f64]) -> Result<Vec<f64>, TensorError>,
    vjp: impl Fn(&[f64], &[f64]) -> Result<Vec<f64>, TensorError>,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let project = |x: &[f64]| -> Result<f64, TensorError> {
        let out = forward(x)?;
        if out.len() != upstream.len() {
            return Err(TensorError::LengthMismatch {
                expected: upstream.len(),
                got: out.len(),
            });
        }
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(out.iter().zip(upstream).map(|(&o, &u)| o * u).sum())
    };

    let analytic = match vjp(point, upstream) {
        Ok(g) => g,
        Err(e) => return GradCheckReport::failure(err_location(&e)),
    };
    if analytic.len() != point.len() {
        return GradCheckReport::failure(None);
    }
    if let Some(index) = analytic.iter().position(|v| !v.is_finite()) {
        return GradCheckReport::failure(Some(index));
    }

    let mut x = point.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0usize;
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + settings.step;
        let plus = match project(&x) {
            Ok(v) => v,
            Err(e) => return GradCheckReport::failure(err_location(&e).or(Some(i))),
        };
        x[i] = saved - settings.step;
        let minus = match project(&x) {
            Ok(v) => v,
            Err(e) => return GradCheckReport::failure(err_location(&e).or(Some(i))),
        };
        x[i] = saved;
        let numeric = (plus - minus) / (2.0 * settings.step);
        let denom = (analytic[i].abs() + numeric.abs()).max(settings.abs_floor);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_index,
        elements: x.len(),
        non_finite: None,
        passed: max_rel_error < settings.rel_tol,
    }
}

fn split3(x: &[f64], a: usize, b: usize) -> (&[f64], &[f64], &[f64]) {
    (&x[..a], &x[a..a + b], &x[a + b..])
}

fn rebuild_conv(
    template: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
) -> Result<ConvSpec, TensorError> {
    ConvSpec::new(
        template.out_channels,
        template.kernel,
        template.padding,
        template.dilation,
        Tensor::new(template.weights.shape(), weights.to_vec())?,
        bias.to_vec(),
    )
}

/// Check conv2d with respect to input, weights, and bias together.
pub fn check_conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let n_in = input.len();
    let n_w = spec.weights.len();
    let mut point = input.data().to_vec();
    point.extend_from_slice(spec.weights.data());
    point.extend_from_slice(&spec.bias);
    let in_shape = input.shape().to_vec();

    grad_check(
        &point,
        upstream.data(),
        |x| {
            let (xi, xw, xb) = split3(x, n_in, n_w);
            let input = Tensor::new(&in_shape, xi.to_vec())?;
            let spec = rebuild_conv(spec, xw, xb)?;
            Ok(conv2d(&input, &spec)?.into_data())
        },
        |x, u| {
            let (xi, xw, xb) = split3(x, n_in, n_w);
            let input = Tensor::new(&in_shape, xi.to_vec())?;
            let spec = rebuild_conv(spec, xw, xb)?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            let grads = conv2d_backward(&input, &spec, &g)?;
            let mut flat = grads.input.into_data();
            flat.extend_from_slice(grads.weights.data());
            flat.extend_from_slice(&grads.bias);
            Ok(flat)
        },
        settings,
    )
}

/// Check global average/max pooling with respect to the input.
pub fn check_global_pool(
    input: &Tensor,
    mode: PoolMode,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = input.shape().to_vec();
    grad_check(
        input.data(),
        upstream.data(),
        |x| Ok(global_pool(&Tensor::new(&shape, x.to_vec())?, mode)?.into_data()),
        |x, u| {
            let input = Tensor::new(&shape, x.to_vec())?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            Ok(global_pool_backward(&input, mode, &g)?.into_data())
        },
        settings,
    )
}

/// Check channel pooling with respect to the input.
pub fn check_channel_pool(
    input: &Tensor,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = input.shape().to_vec();
    grad_check(
        input.data(),
        upstream.data(),
        |x| Ok(channel_pool(&Tensor::new(&shape, x.to_vec())?)?.into_data()),
        |x, u| {
            let input = Tensor::new(&shape, x.to_vec())?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            Ok(channel_pool_backward(&input, &g)?.into_data())
        },
        settings,
    )
}

fn pack_mlp(input: &[f64], params: &Mlp2Params) -> Vec<f64> {
    let mut point = input.to_vec();
    point.extend_from_slice(params.w1.data());
    point.extend_from_slice(params.w2.data());
    if let Some(b) = &params.b1 {
        point.extend_from_slice(b);
    }
    if let Some(b) = &params.b2 {
        point.extend_from_slice(b);
    }
    point
}

fn unpack_mlp(
    template: &Mlp2Params,
    n_input: usize,
    x: &[f64],
) -> Result<(Vec<f64>, Mlp2Params), TensorError> {
    let mut at = 0usize;
    let mut take = |n: usize| {
        let s = x[at..at + n].to_vec();
        at += n;
        s
    };
    let input = take(n_input);
    let w1 = Tensor::new(template.w1.shape(), take(template.w1.len()))?;
    let w2 = Tensor::new(template.w2.shape(), take(template.w2.len()))?;
    let b1 = template.b1.as_ref().map(|b| take(b.len()));
    let b2 = template.b2.as_ref().map(|b| take(b.len()));
    Ok((input, Mlp2Params::new(w1, w2, b1, b2)?))
}

fn flatten_mlp_grads(grads: crate::ops::Mlp2Grads) -> Vec<f64> {
    let mut flat = grads.input;
    flat.extend_from_slice(grads.w1.data());
    flat.extend_from_slice(grads.w2.data());
    if let Some(b) = grads.b1 {
        flat.extend_from_slice(&b);
    }
    if let Some(b) = grads.b2 {
        flat.extend_from_slice(&b);
    }
    flat
}

/// Check the two-layer MLP with respect to input and all parameters.
pub fn check_mlp2(
    input: &[f64],
    params: &Mlp2Params,
    upstream: &[f64],
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let point = pack_mlp(input, params);
    let n_input = input.len();
    grad_check(
        &point,
        upstream,
        |x| {
            let (input, params) = unpack_mlp(params, n_input, x)?;
            mlp2(&input, &params)
        },
        |x, u| {
            let (input, params) = unpack_mlp(params, n_input, x)?;
            Ok(flatten_mlp_grads(mlp2_backward(&input, &params, u)?))
        },
        settings,
    )
}

/// Check the elementwise sigmoid.
pub fn check_sigmoid_map(
    input: &Tensor,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = input.shape().to_vec();
    grad_check(
        input.data(),
        upstream.data(),
        |x| Ok(sigmoid_map(&Tensor::new(&shape, x.to_vec())?)?.into_data()),
        |x, u| {
            let input = Tensor::new(&shape, x.to_vec())?;
            let g = Tensor::new(&shape, u.to_vec())?;
            Ok(sigmoid_map_backward(&input, &g)?.into_data())
        },
        settings,
    )
}

/// Check the elementwise ReLU (inputs should stay away from the kink).
pub fn check_relu(
    input: &Tensor,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = input.shape().to_vec();
    grad_check(
        input.data(),
        upstream.data(),
        |x| Ok(relu(&Tensor::new(&shape, x.to_vec())?)?.into_data()),
        |x, u| {
            let input = Tensor::new(&shape, x.to_vec())?;
            let g = Tensor::new(&shape, u.to_vec())?;
            Ok(relu_backward(&input, &g)?.into_data())
        },
        settings,
    )
}

/// Check combine with respect to both arguments.
pub fn check_combine(
    a: &Tensor,
    b: &Tensor,
    mode: CombineMode,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let na = a.len();
    let shape_a = a.shape().to_vec();
    let shape_b = b.shape().to_vec();
    let mut point = a.data().to_vec();
    point.extend_from_slice(b.data());
    grad_check(
        &point,
        upstream.data(),
        |x| {
            let a = Tensor::new(&shape_a, x[..na].to_vec())?;
            let b = Tensor::new(&shape_b, x[na..].to_vec())?;
            Ok(combine(&a, &b, mode)?.into_data())
        },
        |x, u| {
            let a = Tensor::new(&shape_a, x[..na].to_vec())?;
            let b = Tensor::new(&shape_b, x[na..].to_vec())?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            let (da, db) = combine_backward(&a, &b, mode, &g)?;
            let mut flat = da.into_data();
            flat.extend_from_slice(db.data());
            Ok(flat)
        },
        settings,
    )
}

/// Check bilinear upsampling with respect to the input.
pub fn check_upsample_bilinear(
    input: &Tensor,
    target: (usize, usize),
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = input.shape().to_vec();
    grad_check(
        input.data(),
        upstream.data(),
        |x| Ok(upsample_bilinear(&Tensor::new(&shape, x.to_vec())?, target)?.into_data()),
        |x, u| {
            let input = Tensor::new(&shape, x.to_vec())?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            Ok(upsample_bilinear_backward(&input, target, &g)?.into_data())
        },
        settings,
    )
}

/// Check channel attention with respect to the input and MLP parameters.
pub fn check_cam(
    f: &Tensor,
    params: &CamParams,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let n_f = f.len();
    let f_shape = f.shape().to_vec();
    let point = {
        let mut p = f.data().to_vec();
        p.extend(pack_mlp(&[], &params.mlp));
        p
    };
    grad_check(
        &point,
        upstream.data(),
        |x| {
            let f = Tensor::new(&f_shape, x[..n_f].to_vec())?;
            let (_, mlp) = unpack_mlp(&params.mlp, 0, &x[n_f..])?;
            Ok(cam_forward(&f, &CamParams::new(mlp)?)?.scaled.into_data())
        },
        |x, u| {
            let f = Tensor::new(&f_shape, x[..n_f].to_vec())?;
            let (_, mlp) = unpack_mlp(&params.mlp, 0, &x[n_f..])?;
            let g = Tensor::new(&f_shape, u.to_vec())?;
            let grads = cam_backward(&f, &CamParams::new(mlp)?, &g)?;
            let mut flat = grads.input.into_data();
            flat.extend_from_slice(grads.w1.data());
            flat.extend_from_slice(grads.w2.data());
            if let Some(b) = grads.b1 {
                flat.extend_from_slice(&b);
            }
            if let Some(b) = grads.b2 {
                flat.extend_from_slice(&b);
            }
            Ok(flat)
        },
        settings,
    )
}

/// Check spatial attention with respect to the input and convolution
/// parameters.
pub fn check_sam(
    f: &Tensor,
    params: &SamParams,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let n_f = f.len();
    let n_w = params.conv().weights.len();
    let f_shape = f.shape().to_vec();
    let mut point = f.data().to_vec();
    point.extend_from_slice(params.conv().weights.data());
    point.extend_from_slice(&params.conv().bias);
    grad_check(
        &point,
        upstream.data(),
        |x| {
            let (xf, xw, xb) = split3(x, n_f, n_w);
            let f = Tensor::new(&f_shape, xf.to_vec())?;
            let conv = rebuild_conv(params.conv(), xw, xb)?;
            Ok(sam_forward(&f, &SamParams::new(conv)?)?.scaled.into_data())
        },
        |x, u| {
            let (xf, xw, xb) = split3(x, n_f, n_w);
            let f = Tensor::new(&f_shape, xf.to_vec())?;
            let conv = rebuild_conv(params.conv(), xw, xb)?;
            let g = Tensor::new(&f_shape, u.to_vec())?;
            let grads = sam_backward(&f, &SamParams::new(conv)?, &g)?;
            let mut flat = grads.input.into_data();
            flat.extend_from_slice(grads.weights.data());
            flat.extend_from_slice(&grads.bias);
            Ok(flat)
        },
        settings,
    )
}

fn rebuild_aspp(template: &AsppConfig, x: &[f64]) -> Result<AsppConfig, TensorError> {
    let mut at = 0usize;
    let mut branches = Vec::with_capacity(template.branches().len());
    for spec in template.branches() {
        let n_w = spec.weights.len();
        let n_b = spec.bias.len();
        let rebuilt = rebuild_conv(spec, &x[at..at + n_w], &x[at + n_w..at + n_w + n_b])?;
        at += n_w + n_b;
        branches.push(rebuilt);
    }
    let fuse = {
        let n_w = template.fuse().weights.len();
        let n_b = template.fuse().bias.len();
        let f = rebuild_conv(
            template.fuse(),
            &x[at..at + n_w],
            &x[at + n_w..at + n_w + n_b],
        )?;
        at += n_w + n_b;
        f
    };
    debug_assert_eq!(at, x.len());
    AsppConfig::new(
        template.branch_channels(),
        template.dilation_rates().to_vec(),
        template.include_image_pool(),
        branches,
        fuse,
    )
}

/// Check ASPP with respect to the input and every convolution's
/// parameters.
pub fn check_aspp(
    f: &Tensor,
    cfg: &AsppConfig,
    upstream: &Tensor,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let n_f = f.len();
    let f_shape = f.shape().to_vec();
    let mut point = f.data().to_vec();
    for spec in cfg.branches() {
        point.extend_from_slice(spec.weights.data());
        point.extend_from_slice(&spec.bias);
    }
    point.extend_from_slice(cfg.fuse().weights.data());
    point.extend_from_slice(&cfg.fuse().bias);

    grad_check(
        &point,
        upstream.data(),
        |x| {
            let f = Tensor::new(&f_shape, x[..n_f].to_vec())?;
            let cfg = rebuild_aspp(cfg, &x[n_f..])?;
            Ok(aspp_forward(&f, &cfg)?.into_data())
        },
        |x, u| {
            let f = Tensor::new(&f_shape, x[..n_f].to_vec())?;
            let cfg = rebuild_aspp(cfg, &x[n_f..])?;
            let g = Tensor::new(upstream.shape(), u.to_vec())?;
            let grads = aspp_backward(&f, &cfg, &g)?;
            let mut flat = grads.input.into_data();
            for b in grads.branches {
                flat.extend_from_slice(b.weights.data());
                flat.extend_from_slice(&b.bias);
            }
            flat.extend_from_slice(grads.fuse.weights.data());
            flat.extend_from_slice(&grads.fuse.bias);
            Ok(flat)
        },
        settings,
    )
}

const LOSS_SHAPE_ERR: TensorError = TensorError::InvalidParam {
    what: "loss input rejected",
};

/// Check the Dice loss gradient with respect to the prediction.
pub fn check_dice_loss(
    pred: &Tensor,
    target: &Tensor,
    eps: f64,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shape = pred.shape().to_vec();
    grad_check(
        pred.data(),
        &[1.0],
        |x| {
            let pred = Tensor::new(&shape, x.to_vec())?;
            Ok(vec![
                dice_loss(&pred, target, eps).map_err(|_| LOSS_SHAPE_ERR)?
            ])
        },
        |x, u| {
            let pred = Tensor::new(&shape, x.to_vec())?;
            let g = dice_loss_backward(&pred, target, eps).map_err(|_| LOSS_SHAPE_ERR)?;
            Ok(g.data().iter().map(|&v| v * u[0]).collect())
        },
        settings,
    )
}

/// Check the focal loss derivative with respect to the prediction.
pub fn check_focal_loss(
    pred: f64,
    target: bool,
    alpha: f64,
    gamma: f64,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    grad_check(
        &[pred],
        &[1.0],
        |x| Ok(vec![focal_loss(x[0], target, alpha, gamma)]),
        |x, u| Ok(vec![focal_loss_backward(x[0], target, alpha, gamma) * u[0]]),
        settings,
    )
}

/// Check the smooth-L1 gradient with respect to the prediction (residuals
/// should stay away from |d| = 1).
pub fn check_smooth_l1(
    pred: &[f64],
    target: &[f64],
    settings: &GradCheckSettings,
) -> GradCheckReport {
    grad_check(
        pred,
        &[1.0],
        |x| Ok(vec![smooth_l1(x, target).map_err(|_| LOSS_SHAPE_ERR)?]),
        |x, u| {
            let g = smooth_l1_backward(x, target).map_err(|_| LOSS_SHAPE_ERR)?;
            Ok(g.into_iter().map(|v| v * u[0]).collect())
        },
        settings,
    )
}

/// Check the mask loss gradient with respect to every predicted mask.
///
/// Predicted values must sit at least one FD step inside [0, 1] so the
/// perturbed batches stay valid.
pub fn check_mask_loss(
    batch: &MaskBatch,
    eps: f64,
    settings: &GradCheckSettings,
) -> GradCheckReport {
    let shapes: Vec<Vec<usize>> = batch
        .predicted()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    let sizes: Vec<usize> = batch.predicted().iter().map(|t| t.len()).collect();
    let point: Vec<f64> = batch
        .predicted()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let rebuild = |x: &[f64]| -> Result<MaskBatch, TensorError> {
        let mut at = 0usize;
        let mut preds = Vec::with_capacity(sizes.len());
        for (shape, &n) in shapes.iter().zip(&sizes) {
            preds.push(Tensor::new(shape, x[at..at + n].to_vec())?);
            at += n;
        }
        MaskBatch::new(
            *batch.grid(),
            preds,
            batch.target().to_vec(),
            (1..=batch.grid().cells())
                .map(|k| {
                    if batch.pos_indicator(k).unwrap_or(false) {
                        1
                    } else {
                        0
                    }
                })
                .collect(),
        )
        .map_err(|_| LOSS_SHAPE_ERR)
    };
    grad_check(
        &point,
        &[1.0],
        |x| {
            let b = rebuild(x)?;
            Ok(vec![mask_loss(&b, eps).map_err(|_| LOSS_SHAPE_ERR)?])
        },
        |x, u| {
            let b = rebuild(x)?;
            let grads = mask_loss_backward(&b, eps).map_err(|_| LOSS_SHAPE_ERR)?;
            Ok(grads
                .iter()
                .flat_map(|t| t.data().iter().map(|&v| v * u[0]))
                .collect())
        },
        settings,
    )
}
