//! Channel attention, spatial attention, and atrous spatial pyramid pooling.
//!
//! All three are pure compositions of the kernels in [`crate::ops`]:
//!
//! - channel attention rescales each channel by
//!   `σ(mlp(GAP(F)) + mlp(GMP(F)))` — one shared MLP, two evaluations;
//! - spatial attention rescales each pixel by
//!   `σ(conv7×7([channel-avg, channel-max]))`;
//! - ASPP runs a 1×1 convolution, one 3×3 atrous convolution per dilation
//!   rate, and an optional image-pooling branch in parallel, concatenates,
//!   and fuses with a 1×1 convolution, with ReLU after every convolution.
//!
//! Each module has a hand-written backward verified by finite differences.

use alloc::vec::Vec;

use crate::ops::{
    channel_pool, channel_pool_backward, combine, combine_backward, conv2d, conv2d_backward,
    global_pool, global_pool_backward, mlp2, mlp2_backward, relu, relu_backward, sigmoid,
    sigmoid_map, sigmoid_map_backward, upsample_bilinear, upsample_bilinear_backward, CombineMode,
    ConvSpec, Mlp2Params, PoolMode,
};
use crate::tensor::{Tensor, TensorError};

/// Parameters of the channel attention module: the shared two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct CamParams {
    pub mlp: Mlp2Params,
}

impl CamParams {
    /// The MLP must map a C-vector back to a C-vector.
    pub fn new(mlp: Mlp2Params) -> Result<Self, TensorError> {
        if mlp.input_len() != mlp.output_len() {
            return Err(TensorError::DimMismatch {
                axis: "mlp_output",
                expected: mlp.input_len(),
                got: mlp.output_len(),
            });
        }
        Ok(Self { mlp })
    }

    pub fn channels(&self) -> usize {
        self.mlp.input_len()
    }
}

/// Result of [`cam_forward`]: the rescaled map and the per-channel scale.
#[derive(Debug, Clone)]
pub struct CamOutput {
    pub scaled: Tensor,
    pub scale: Vec<f64>,
}

/// Gradients of [`cam_forward`] with respect to the input and MLP weights.
#[derive(Debug, Clone)]
pub struct CamGrads {
    pub input: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
}

/// Channel attention: per-channel rescaling of `f` by
/// `σ(mlp(GAP(f)) + mlp(GMP(f)))`, every scale strictly in (0, 1).
pub fn cam_forward(f: &Tensor, params: &CamParams) -> Result<CamOutput, TensorError> {
    let (c, _, _) = f.dims3()?;
    if params.channels() != c {
        return Err(TensorError::DimMismatch {
            axis: "channels",
            expected: params.channels(),
            got: c,
        });
    }
    let gap = global_pool(f, PoolMode::Avg)?;
    let gmp = global_pool(f, PoolMode::Max)?;
    let avg_path = mlp2(gap.data(), &params.mlp)?;
    let max_path = mlp2(gmp.data(), &params.mlp)?;
    let scale: Vec<f64> = avg_path
        .iter()
        .zip(&max_path)
        .map(|(&a, &m)| sigmoid(a + m))
        .collect();
    let scale_t = Tensor::new(&[c, 1, 1], scale.clone())?;
    let scaled = combine(f, &scale_t, CombineMode::MulBroadcast)?;
    Ok(CamOutput { scaled, scale })
}

/// VJP of [`cam_forward`] given the upstream gradient on the scaled output.
pub fn cam_backward(
    f: &Tensor,
    params: &CamParams,
    grad_scaled: &Tensor,
) -> Result<CamGrads, TensorError> {
    let (c, _, _) = f.dims3()?;
    if params.channels() != c {
        return Err(TensorError::DimMismatch {
            axis: "channels",
            expected: params.channels(),
            got: c,
        });
    }
    let gap = global_pool(f, PoolMode::Avg)?;
    let gmp = global_pool(f, PoolMode::Max)?;
    let avg_path = mlp2(gap.data(), &params.mlp)?;
    let max_path = mlp2(gmp.data(), &params.mlp)?;
    let pre: Vec<f64> = avg_path
        .iter()
        .zip(&max_path)
        .map(|(&a, &m)| a + m)
        .collect();
    let scale: Vec<f64> = pre.iter().map(|&z| sigmoid(z)).collect();
    let scale_t = Tensor::new(&[c, 1, 1], scale)?;

    let (direct, d_scale) = combine_backward(f, &scale_t, CombineMode::MulBroadcast, grad_scaled)?;
    let d_pre: Vec<f64> = d_scale
        .data()
        .iter()
        .zip(scale_t.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();

    let avg_grads = mlp2_backward(gap.data(), &params.mlp, &d_pre)?;
    let max_grads = mlp2_backward(gmp.data(), &params.mlp, &d_pre)?;

    let d_gap = Tensor::new(&[c, 1, 1], avg_grads.input.clone())?;
    let d_gmp = Tensor::new(&[c, 1, 1], max_grads.input.clone())?;
    let via_avg = global_pool_backward(f, PoolMode::Avg, &d_gap)?;
    let via_max = global_pool_backward(f, PoolMode::Max, &d_gmp)?;

    let mut input = direct;
    for (dst, (&a, &m)) in input
        .data_mut()
        .iter_mut()
        .zip(via_avg.data().iter().zip(via_max.data()))
    {
        *dst += a + m;
    }

    let mut w1 = avg_grads.w1;
    for (a, b) in w1.data_mut().iter_mut().zip(max_grads.w1.data()) {
        *a += b;
    }
    let mut w2 = avg_grads.w2;
    for (a, b) in w2.data_mut().iter_mut().zip(max_grads.w2.data()) {
        *a += b;
    }
    let b1 = match (avg_grads.b1, max_grads.b1) {
        (Some(mut a), Some(b)) => {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            Some(a)
        }
        _ => None,
    };
    let b2 = match (avg_grads.b2, max_grads.b2) {
        (Some(mut a), Some(b)) => {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            Some(a)
        }
        _ => None,
    };
    Ok(CamGrads {
        input,
        w1,
        w2,
        b1,
        b2,
    })
}

/// Parameters of the spatial attention module: a single 7×7 convolution
/// over the stacked channel-average/channel-max planes.
#[derive(Debug, Clone, PartialEq)]
pub struct SamParams {
    conv: ConvSpec,
}

impl SamParams {
    /// The convolution must be exactly 7×7, 2 input channels, 1 output
    /// channel, padding 3, dilation 1 — anything else cannot produce a
    /// single attention plane of the input's spatial size.
    pub fn new(conv: ConvSpec) -> Result<Self, TensorError> {
        if conv.kernel != (7, 7) {
            return Err(TensorError::DimMismatch {
                axis: "kernel",
                expected: 7,
                got: conv.kernel.0,
            });
        }
        if conv.in_channels() != 2 {
            return Err(TensorError::DimMismatch {
                axis: "in_channels",
                expected: 2,
                got: conv.in_channels(),
            });
        }
        if conv.out_channels != 1 {
            return Err(TensorError::DimMismatch {
                axis: "out_channels",
                expected: 1,
                got: conv.out_channels,
            });
        }
        if conv.padding != (3, 3) {
            return Err(TensorError::InvalidParam {
                what: "spatial attention conv requires padding 3",
            });
        }
        if conv.dilation != (1, 1) {
            return Err(TensorError::InvalidParam {
                what: "spatial attention conv requires dilation 1",
            });
        }
        Ok(Self { conv })
    }

    pub fn conv(&self) -> &ConvSpec {
        &self.conv
    }
}

/// Result of [`sam_forward`]: the rescaled map and the 1×H×W attention
/// plane.
#[derive(Debug, Clone)]
pub struct SamOutput {
    pub scaled: Tensor,
    pub attention: Tensor,
}

/// Gradients of [`sam_forward`].
#[derive(Debug, Clone)]
pub struct SamGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Spatial attention: per-pixel rescaling of `f` by
/// `σ(conv7×7(channel_pool(f)))`.
pub fn sam_forward(f: &Tensor, params: &SamParams) -> Result<SamOutput, TensorError> {
    let pooled = channel_pool(f)?;
    let pre = conv2d(&pooled, &params.conv)?;
    let attention = sigmoid_map(&pre)?;
    let scaled = combine(f, &attention, CombineMode::MulBroadcast)?;
    Ok(SamOutput { scaled, attention })
}

/// VJP of [`sam_forward`] given the upstream gradient on the scaled output.
pub fn sam_backward(
    f: &Tensor,
    params: &SamParams,
    grad_scaled: &Tensor,
) -> Result<SamGrads, TensorError> {
    let pooled = channel_pool(f)?;
    let pre = conv2d(&pooled, &params.conv)?;
    let attention = sigmoid_map(&pre)?;

    let (direct, d_attn) = combine_backward(f, &attention, CombineMode::MulBroadcast, grad_scaled)?;
    let d_pre = sigmoid_map_backward(&pre, &d_attn)?;
    let conv_grads = conv2d_backward(&pooled, &params.conv, &d_pre)?;
    let via_pool = channel_pool_backward(f, &conv_grads.input)?;

    let mut input = direct;
    for (dst, &src) in input.data_mut().iter_mut().zip(via_pool.data()) {
        *dst += src;
    }
    Ok(SamGrads {
        input,
        weights: conv_grads.weights,
        bias: conv_grads.bias,
    })
}

/// Atrous spatial pyramid pooling configuration.
///
/// The branch list is, in order: one 1×1 convolution, one 3×3 atrous
/// convolution per dilation rate (padding equal to the rate, so H×W is
/// preserved), and — when `include_image_pool` is set — a global-average
/// branch whose 1×1 convolution output is bilinearly restored to H×W.
/// The concatenation is fused by a final 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AsppConfig {
    branch_channels: usize,
    dilation_rates: Vec<usize>,
    include_image_pool: bool,
    branches: Vec<ConvSpec>,
    fuse: ConvSpec,
}

/// Default dilation rates when nothing else is configured.
pub const ASPP_DEFAULT_RATES: [usize; 3] = [6, 12, 18];

impl AsppConfig {
    pub fn new(
        branch_channels: usize,
        dilation_rates: Vec<usize>,
        include_image_pool: bool,
        branches: Vec<ConvSpec>,
        fuse: ConvSpec,
    ) -> Result<Self, TensorError> {
        if branch_channels == 0 {
            return Err(TensorError::InvalidParam {
                what: "branch_channels must be >= 1",
            });
        }
        if dilation_rates.iter().any(|&r| r < 1) {
            return Err(TensorError::InvalidParam {
                what: "dilation rates must be >= 1",
            });
        }
        let expected = 1 + dilation_rates.len() + usize::from(include_image_pool);
        if branches.len() != expected {
            return Err(TensorError::DimMismatch {
                axis: "branches",
                expected,
                got: branches.len(),
            });
        }
        let in_channels = branches[0].in_channels();
        for (idx, spec) in branches.iter().enumerate() {
            if spec.in_channels() != in_channels {
                return Err(TensorError::DimMismatch {
                    axis: "in_channels",
                    expected: in_channels,
                    got: spec.in_channels(),
                });
            }
            if spec.out_channels != branch_channels {
                return Err(TensorError::DimMismatch {
                    axis: "out_channels",
                    expected: branch_channels,
                    got: spec.out_channels,
                });
            }
            let is_atrous = idx >= 1 && idx <= dilation_rates.len();
            if is_atrous {
                let rate = dilation_rates[idx - 1];
                if spec.kernel != (3, 3)
                    || spec.dilation != (rate, rate)
                    || spec.padding != (rate, rate)
                {
                    return Err(TensorError::InvalidParam {
                        what: "atrous branch must be 3x3 with padding equal to its dilation rate",
                    });
                }
            } else if spec.kernel != (1, 1) || spec.dilation != (1, 1) || spec.padding != (0, 0) {
                return Err(TensorError::InvalidParam {
                    what: "non-atrous branch must be a plain 1x1 convolution",
                });
            }
        }
        if fuse.kernel != (1, 1) || fuse.dilation != (1, 1) || fuse.padding != (0, 0) {
            return Err(TensorError::InvalidParam {
                what: "fuse must be a plain 1x1 convolution",
            });
        }
        let concat_channels = branches.len() * branch_channels;
        if fuse.in_channels() != concat_channels {
            return Err(TensorError::DimMismatch {
                axis: "fuse_in_channels",
                expected: concat_channels,
                got: fuse.in_channels(),
            });
        }
        Ok(Self {
            branch_channels,
            dilation_rates,
            include_image_pool,
            branches,
            fuse,
        })
    }

    pub fn branch_channels(&self) -> usize {
        self.branch_channels
    }

    pub fn dilation_rates(&self) -> &[usize] {
        &self.dilation_rates
    }

    pub fn include_image_pool(&self) -> bool {
        self.include_image_pool
    }

    pub fn branches(&self) -> &[ConvSpec] {
        &self.branches
    }

    pub fn fuse(&self) -> &ConvSpec {
        &self.fuse
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.fuse.out_channels
    }

    fn pool_branch_index(&self) -> Option<usize> {
        self.include_image_pool.then(|| self.branches.len() - 1)
    }
}

/// Per-convolution parameter gradients inside a composite module.
#[derive(Debug, Clone)]
pub struct ConvParamGrads {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Gradients of [`aspp_forward`].
#[derive(Debug, Clone)]
pub struct AsppGrads {
    pub input: Tensor,
    pub branches: Vec<ConvParamGrads>,
    pub fuse: ConvParamGrads,
}

struct AsppTrace {
    branch_pre: Vec<Tensor>,
    pool_gap: Option<Tensor>,
    pool_pre: Option<Tensor>,
    pool_act: Option<Tensor>,
    concat: Tensor,
    fuse_pre: Tensor,
    output: Tensor,
}

fn aspp_run(f: &Tensor, cfg: &AsppConfig) -> Result<AsppTrace, TensorError> {
    let (_, h, w) = f.dims3()?;
    let pool_idx = cfg.pool_branch_index();
    let mut branch_pre = Vec::with_capacity(cfg.branches.len());
    let mut pool_gap = None;
    let mut pool_pre = None;
    let mut pool_act = None;

    let mut concat_data = Vec::new();
    for (idx, spec) in cfg.branches.iter().enumerate() {
        let out = if Some(idx) == pool_idx {
            let gap = global_pool(f, PoolMode::Avg)?;
            let pre = conv2d(&gap, spec)?;
            let act = relu(&pre)?;
            let up = upsample_bilinear(&act, (h, w))?;
            pool_gap = Some(gap);
            pool_pre = Some(pre);
            pool_act = Some(act);
            branch_pre.push(Tensor::zeros(&[1, 1, 1])?); // placeholder, unused
            up
        } else {
            let pre = conv2d(f, spec)?;
            let act = relu(&pre)?;
            branch_pre.push(pre);
            act
        };
        let (bc, bh, bw) = out.dims3()?;
        if bh != h || bw != w {
            return Err(TensorError::DimMismatch {
                axis: "branch_spatial",
                expected: h,
                got: bh,
            });
        }
        if bc != cfg.branch_channels {
            return Err(TensorError::DimMismatch {
                axis: "branch_channels",
                expected: cfg.branch_channels,
                got: bc,
            });
        }
        concat_data.extend_from_slice(out.data());
    }
    let concat = Tensor::new(
        &[cfg.branches.len() * cfg.branch_channels, h, w],
        concat_data,
    )?;
    let fuse_pre = conv2d(&concat, &cfg.fuse)?;
    let output = relu(&fuse_pre)?;
    Ok(AsppTrace {
        branch_pre,
        pool_gap,
        pool_pre,
        pool_act,
        concat,
        fuse_pre,
        output,
    })
}

/// Multiscale feature extraction: parallel atrous branches plus image
/// pooling, concatenated and fused. Output spatial size equals the input's.
pub fn aspp_forward(f: &Tensor, cfg: &AsppConfig) -> Result<Tensor, TensorError> {
    Ok(aspp_run(f, cfg)?.output)
}

/// VJP of [`aspp_forward`] given the upstream gradient on the fused output.
pub fn aspp_backward(
    f: &Tensor,
    cfg: &AsppConfig,
    grad_out: &Tensor,
) -> Result<AsppGrads, TensorError> {
    let (c, h, w) = f.dims3()?;
    let trace = aspp_run(f, cfg)?;
    grad_out.expect_shape(trace.output.shape())?;
    let pool_idx = cfg.pool_branch_index();

    let d_fuse_pre = relu_backward(&trace.fuse_pre, grad_out)?;
    let fuse_grads = conv2d_backward(&trace.concat, &cfg.fuse, &d_fuse_pre)?;

    let mut d_input = Tensor::zeros(&[c, h, w])?;
    let mut branch_grads = Vec::with_capacity(cfg.branches.len());
    let chunk = cfg.branch_channels * h * w;
    for (idx, spec) in cfg.branches.iter().enumerate() {
        let slice = &fuse_grads.input.data()[idx * chunk..(idx + 1) * chunk];
        let d_branch = Tensor::new(&[cfg.branch_channels, h, w], slice.to_vec())?;
        let grads = if Some(idx) == pool_idx {
            let gap = trace.pool_gap.as_ref().expect("pool branch trace");
            let pre = trace.pool_pre.as_ref().expect("pool branch trace");
            let act = trace.pool_act.as_ref().expect("pool branch trace");
            let d_act = upsample_bilinear_backward(act, (h, w), &d_branch)?;
            let d_pre = relu_backward(pre, &d_act)?;
            let cg = conv2d_backward(gap, spec, &d_pre)?;
            let via_pool = global_pool_backward(f, PoolMode::Avg, &cg.input)?;
            for (dst, &src) in d_input.data_mut().iter_mut().zip(via_pool.data()) {
                *dst += src;
            }
            cg
        } else {
            let d_pre = relu_backward(&trace.branch_pre[idx], &d_branch)?;
            let cg = conv2d_backward(f, spec, &d_pre)?;
            for (dst, &src) in d_input.data_mut().iter_mut().zip(cg.input.data()) {
                *dst += src;
            }
            cg
        };
        branch_grads.push(ConvParamGrads {
            weights: grads.weights,
            bias: grads.bias,
        });
    }
    Ok(AsppGrads {
        input: d_input,
        branches: branch_grads,
        fuse: ConvParamGrads {
            weights: fuse_grads.weights,
            bias: fuse_grads.bias,
        },
    })
}
