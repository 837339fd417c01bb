//! Forward kernels and their vector–Jacobian products.
//!
//! Every kernel here is stride-1, double precision, and deterministic:
//! accumulation order is fixed, so identical inputs give bitwise-identical
//! outputs. Backward passes are per-op VJPs (no graph engine); each takes
//! the original inputs plus the upstream gradient and returns gradients in
//! the same layout as the corresponding input.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Tensor, TensorError};

/// 2-D convolution parameters with explicit weights.
///
/// Weights are laid out out_channels × in_channels × kh × kw. Stride is
/// fixed at 1; padding is zeros on each side; dilation spaces the kernel
/// taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl ConvSpec {
    pub fn new(
        out_channels: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        weights: Tensor,
        bias: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if dilation.0 < 1 || dilation.1 < 1 {
            return Err(TensorError::InvalidParam {
                what: "dilation must be >= 1",
            });
        }
        if kernel.0 < 1 || kernel.1 < 1 {
            return Err(TensorError::InvalidParam {
                what: "kernel size must be >= 1",
            });
        }
        let shape = weights.shape();
        if shape.len() != 4 {
            return Err(TensorError::RankMismatch {
                expected: 4,
                got: shape.len(),
            });
        }
        if shape[0] != out_channels {
            return Err(TensorError::DimMismatch {
                axis: "out_channels",
                expected: out_channels,
                got: shape[0],
            });
        }
        if shape[2] != kernel.0 {
            return Err(TensorError::DimMismatch {
                axis: "kernel_h",
                expected: kernel.0,
                got: shape[2],
            });
        }
        if shape[3] != kernel.1 {
            return Err(TensorError::DimMismatch {
                axis: "kernel_w",
                expected: kernel.1,
                got: shape[3],
            });
        }
        if bias.len() != out_channels {
            return Err(TensorError::DimMismatch {
                axis: "bias",
                expected: out_channels,
                got: bias.len(),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(TensorError::InvalidParam {
                what: "bias must be finite",
            });
        }
        Ok(Self {
            out_channels,
            kernel,
            padding,
            dilation,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Output spatial size for an H×W input: H + 2p − ((k−1)·d + 1) + 1.
    pub fn output_size(&self, input: (usize, usize)) -> Result<(usize, usize), TensorError> {
        let eh = (self.kernel.0 - 1) * self.dilation.0 + 1;
        let ew = (self.kernel.1 - 1) * self.dilation.1 + 1;
        let ph = input.0 + 2 * self.padding.0;
        let pw = input.1 + 2 * self.padding.1;
        if eh > ph {
            return Err(TensorError::KernelTooLarge {
                axis: "height",
                extent: eh,
                padded: ph,
            });
        }
        if ew > pw {
            return Err(TensorError::KernelTooLarge {
                axis: "width",
                extent: ew,
                padded: pw,
            });
        }
        Ok((ph - eh + 1, pw - ew + 1))
    }
}

/// Gradients of [`conv2d`] with respect to input, weights, and bias.
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Stride-1 2-D convolution with zero padding and dilation.
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    if c != spec.in_channels() {
        return Err(TensorError::DimMismatch {
            axis: "in_channels",
            expected: spec.in_channels(),
            got: c,
        });
    }
    let (oh, ow) = spec.output_size((h, w))?;
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut out = Tensor::zeros(&[spec.out_channels, oh, ow])?;
    for oc in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = spec.bias[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy + ky * dh) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx * dw) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += spec.weights.at4(oc, ic, ky, kx)
                                * input.at3(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.set3(oc, oy, ox, acc);
            }
        }
    }
    out.check_finite()?;
    Ok(out)
}

/// VJP of [`conv2d`]: upstream gradient must match the forward output shape.
pub fn conv2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<Conv2dGrads, TensorError> {
    let (c, h, w) = input.dims3()?;
    if c != spec.in_channels() {
        return Err(TensorError::DimMismatch {
            axis: "in_channels",
            expected: spec.in_channels(),
            got: c,
        });
    }
    let (oh, ow) = spec.output_size((h, w))?;
    grad_out.expect_shape(&[spec.out_channels, oh, ow])?;
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut d_input = Tensor::zeros(&[c, h, w])?;
    let mut d_weights = Tensor::zeros(spec.weights.shape())?;
    let mut d_bias = vec![0.0; spec.out_channels];
    for oc in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at3(oc, oy, ox);
                d_bias[oc] += g;
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy + ky * dh) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx * dw) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            d_input.add3(ic, iy, ix, g * spec.weights.at4(oc, ic, ky, kx));
                            d_weights.add4(oc, ic, ky, kx, g * input.at3(ic, iy, ix));
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}

/// Pooling reduction used by [`global_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Global spatial pooling: C×H×W → C×1×1 (per-channel mean or max).
pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    if h == 0 || w == 0 {
        return Err(TensorError::EmptySpatial);
    }
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let v = match mode {
            PoolMode::Avg => {
                let mut sum = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        sum += input.at3(ch, y, x);
                    }
                }
                sum / (h * w) as f64
            }
            PoolMode::Max => {
                let mut best = f64::NEG_INFINITY;
                for y in 0..h {
                    for x in 0..w {
                        best = best.max(input.at3(ch, y, x));
                    }
                }
                best
            }
        };
        out.push(v);
    }
    Tensor::new(&[c, 1, 1], out)
}

/// VJP of [`global_pool`]. Max routes its gradient to the first maximum in
/// row-major order.
pub fn global_pool_backward(
    input: &Tensor,
    mode: PoolMode,
    grad_out: &Tensor,
) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    grad_out.expect_shape(&[c, 1, 1])?;
    let mut d_input = Tensor::zeros(&[c, h, w])?;
    for ch in 0..c {
        let g = grad_out.at3(ch, 0, 0);
        match mode {
            PoolMode::Avg => {
                let share = g / (h * w) as f64;
                for y in 0..h {
                    for x in 0..w {
                        d_input.set3(ch, y, x, share);
                    }
                }
            }
            PoolMode::Max => {
                let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                for y in 0..h {
                    for x in 0..w {
                        let v = input.at3(ch, y, x);
                        if v > best {
                            best = v;
                            by = y;
                            bx = x;
                        }
                    }
                }
                d_input.set3(ch, by, bx, g);
            }
        }
    }
    Ok(d_input)
}

/// Per-pixel pooling across channels: C×H×W → 2×H×W.
///
/// Plane 0 is the channel mean, plane 1 the channel max — the
/// concatenation fed to the 7×7 convolution of the spatial attention
/// module.
pub fn channel_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    let mut out = Tensor::zeros(&[2, h, w])?;
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = input.at3(ch, y, x);
                sum += v;
                best = best.max(v);
            }
            out.set3(0, y, x, sum / c as f64);
            out.set3(1, y, x, best);
        }
    }
    Ok(out)
}

/// VJP of [`channel_pool`]. The max plane routes to the first maximal
/// channel.
pub fn channel_pool_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    grad_out.expect_shape(&[2, h, w])?;
    let mut d_input = Tensor::zeros(&[c, h, w])?;
    for y in 0..h {
        for x in 0..w {
            let g_avg = grad_out.at3(0, y, x) / c as f64;
            let (mut bc, mut best) = (0, f64::NEG_INFINITY);
            for ch in 0..c {
                let v = input.at3(ch, y, x);
                d_input.add3(ch, y, x, g_avg);
                if v > best {
                    best = v;
                    bc = ch;
                }
            }
            d_input.add3(bc, y, x, grad_out.at3(1, y, x));
        }
    }
    Ok(d_input)
}

/// Two-layer perceptron parameters, shared between the two pooling paths
/// of channel attention: one parameter set, two evaluations.
///
/// `w1` is hidden × in, `w2` is out × hidden, both stored as rank-2
/// tensors. Biases are optional per layer. The hidden activation is ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2Params {
    pub w1: Tensor,
    pub w2: Tensor,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
}

impl Mlp2Params {
    /// Desk-scale default channel reduction of the bottleneck.
    pub const DEFAULT_REDUCTION_RATIO: usize = 4;

    /// Zero-initialized square MLP (C → C) with the given reduction
    /// ratio; the hidden width is floored at 1.
    pub fn zeros(channels: usize, reduction_ratio: usize) -> Result<Self, TensorError> {
        if channels == 0 || reduction_ratio == 0 {
            return Err(TensorError::InvalidParam {
                what: "channels and reduction_ratio must be >= 1",
            });
        }
        let hidden = (channels / reduction_ratio).max(1);
        Self::new(
            Tensor::zeros(&[hidden, channels])?,
            Tensor::zeros(&[channels, hidden])?,
            None,
            None,
        )
    }

    pub fn new(
        w1: Tensor,
        w2: Tensor,
        b1: Option<Vec<f64>>,
        b2: Option<Vec<f64>>,
    ) -> Result<Self, TensorError> {
        let (hidden, _input) = w1.dims2()?;
        let (_out, hidden2) = w2.dims2()?;
        if hidden2 != hidden {
            return Err(TensorError::DimMismatch {
                axis: "hidden",
                expected: hidden,
                got: hidden2,
            });
        }
        if let Some(b) = &b1 {
            if b.len() != hidden {
                return Err(TensorError::DimMismatch {
                    axis: "b1",
                    expected: hidden,
                    got: b.len(),
                });
            }
        }
        if let Some(b) = &b2 {
            let out = w2.shape()[0];
            if b.len() != out {
                return Err(TensorError::DimMismatch {
                    axis: "b2",
                    expected: out,
                    got: b.len(),
                });
            }
        }
        Ok(Self { w1, w2, b1, b2 })
    }

    pub fn input_len(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn hidden_len(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_len(&self) -> usize {
        self.w2.shape()[0]
    }

    /// in / hidden, the channel reduction of the bottleneck.
    pub fn reduction_ratio(&self) -> usize {
        self.input_len() / self.hidden_len().max(1)
    }
}

/// Gradients of [`mlp2`].
#[derive(Debug, Clone)]
pub struct Mlp2Grads {
    pub input: Vec<f64>,
    pub w1: Tensor,
    pub w2: Tensor,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
}

impl Mlp2Grads {
    /// Sum gradients from two evaluations of the same (shared) parameters.
    pub fn accumulate(mut self, other: &Mlp2Grads) -> Result<Self, TensorError> {
        if self.input.len() != other.input.len() {
            return Err(TensorError::LengthMismatch {
                expected: self.input.len(),
                got: other.input.len(),
            });
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += b;
        }
        for (a, b) in self.w1.data_mut().iter_mut().zip(other.w1.data()) {
            *a += b;
        }
        for (a, b) in self.w2.data_mut().iter_mut().zip(other.w2.data()) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.b1, &other.b1) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        if let (Some(a), Some(b)) = (&mut self.b2, &other.b2) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self)
    }
}

fn mat_vec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += m.data()[r * cols + c] * x[c];
        }
        out[r] = acc;
    }
    out
}

/// Shared two-layer MLP with ReLU on the hidden layer:
/// `w2 · relu(w1 · x + b1) + b2`.
pub fn mlp2(input: &[f64], params: &Mlp2Params) -> Result<Vec<f64>, TensorError> {
    if input.len() != params.input_len() {
        return Err(TensorError::DimMismatch {
            axis: "mlp_input",
            expected: params.input_len(),
            got: input.len(),
        });
    }
    let mut hidden = mat_vec(&params.w1, input);
    if let Some(b) = &params.b1 {
        for (h, bv) in hidden.iter_mut().zip(b) {
            *h += bv;
        }
    }
    for h in hidden.iter_mut() {
        *h = h.max(0.0);
    }
    let mut out = mat_vec(&params.w2, &hidden);
    if let Some(b) = &params.b2 {
        for (o, bv) in out.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

/// VJP of [`mlp2`].
pub fn mlp2_backward(
    input: &[f64],
    params: &Mlp2Params,
    grad_out: &[f64],
) -> Result<Mlp2Grads, TensorError> {
    if input.len() != params.input_len() {
        return Err(TensorError::DimMismatch {
            axis: "mlp_input",
            expected: params.input_len(),
            got: input.len(),
        });
    }
    if grad_out.len() != params.output_len() {
        return Err(TensorError::DimMismatch {
            axis: "mlp_output",
            expected: params.output_len(),
            got: grad_out.len(),
        });
    }
    let (hidden_n, in_n) = (params.hidden_len(), params.input_len());
    let out_n = params.output_len();

    let mut pre = mat_vec(&params.w1, input);
    if let Some(b) = &params.b1 {
        for (h, bv) in pre.iter_mut().zip(b) {
            *h += bv;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();

    let mut d_w2 = Tensor::zeros(params.w2.shape())?;
    for o in 0..out_n {
        for j in 0..hidden_n {
            d_w2.data_mut()[o * hidden_n + j] = grad_out[o] * hidden[j];
        }
    }
    let mut d_hidden = vec![0.0; hidden_n];
    for j in 0..hidden_n {
        let mut acc = 0.0;
        for o in 0..out_n {
            acc += grad_out[o] * params.w2.data()[o * hidden_n + j];
        }
        d_hidden[j] = acc;
    }
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();

    let mut d_w1 = Tensor::zeros(params.w1.shape())?;
    for j in 0..hidden_n {
        for i in 0..in_n {
            d_w1.data_mut()[j * in_n + i] = d_pre[j] * input[i];
        }
    }
    let mut d_input = vec![0.0; in_n];
    for i in 0..in_n {
        let mut acc = 0.0;
        for j in 0..hidden_n {
            acc += d_pre[j] * params.w1.data()[j * in_n + i];
        }
        d_input[i] = acc;
    }
    Ok(Mlp2Grads {
        input: d_input,
        w1: d_w1,
        w2: d_w2,
        b1: params.b1.as_ref().map(|_| d_pre.clone()),
        b2: params.b2.as_ref().map(|_| grad_out.to_vec()),
    })
}

/// Numerically stable logistic function e^x / (e^x + 1).
///
/// Saturates one ulp inside (0, 1) so downstream per-channel and per-pixel
/// scales stay strictly between 0 and 1 for every finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Elementwise sigmoid over a tensor.
pub fn sigmoid_map(input: &Tensor) -> Result<Tensor, TensorError> {
    input.map(sigmoid)
}

/// VJP of [`sigmoid_map`]: σ'(x) = σ(x)(1 − σ(x)).
pub fn sigmoid_map_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    grad_out.expect_shape(input.shape())?;
    let data: Vec<f64> = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * s * (1.0 - s)
        })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Elementwise ReLU.
pub fn relu(input: &Tensor) -> Result<Tensor, TensorError> {
    input.map(|v| v.max(0.0))
}

/// VJP of [`relu`] (subgradient 0 at the kink).
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    grad_out.expect_shape(input.shape())?;
    let data: Vec<f64> = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Elementwise / structural combination of two tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Elementwise sum; shapes must match exactly.
    Add,
    /// Elementwise product with broadcast: `b` is either C×1×1 (per-channel
    /// scale) or 1×H×W (per-pixel scale) against an C×H×W `a`.
    MulBroadcast,
    /// Channel concatenation; spatial sizes must match.
    ConcatChannels,
}

/// Combine two tensors; see [`CombineMode`] for shape rules.
pub fn combine(a: &Tensor, b: &Tensor, mode: CombineMode) -> Result<Tensor, TensorError> {
    match mode {
        CombineMode::Add => {
            b.expect_shape(a.shape())?;
            let data: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(a.shape(), data)
        }
        CombineMode::MulBroadcast => {
            let (c, h, w) = a.dims3()?;
            let (bc, bh, bw) = b.dims3()?;
            let mut out = Tensor::zeros(&[c, h, w])?;
            if bc == c && bh == 1 && bw == 1 {
                for ch in 0..c {
                    let s = b.at3(ch, 0, 0);
                    for y in 0..h {
                        for x in 0..w {
                            out.set3(ch, y, x, a.at3(ch, y, x) * s);
                        }
                    }
                }
            } else if bc == 1 && bh == h && bw == w {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            out.set3(ch, y, x, a.at3(ch, y, x) * b.at3(0, y, x));
                        }
                    }
                }
            } else {
                return Err(TensorError::DimMismatch {
                    axis: "broadcast",
                    expected: c,
                    got: bc,
                });
            }
            out.check_finite()?;
            Ok(out)
        }
        CombineMode::ConcatChannels => {
            let (ca, h, w) = a.dims3()?;
            let (cb, bh, bw) = b.dims3()?;
            if bh != h {
                return Err(TensorError::DimMismatch {
                    axis: "height",
                    expected: h,
                    got: bh,
                });
            }
            if bw != w {
                return Err(TensorError::DimMismatch {
                    axis: "width",
                    expected: w,
                    got: bw,
                });
            }
            let mut data = Vec::with_capacity((ca + cb) * h * w);
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::new(&[ca + cb, h, w], data)
        }
    }
}

/// VJP of [`combine`], returning gradients for both arguments.
pub fn combine_backward(
    a: &Tensor,
    b: &Tensor,
    mode: CombineMode,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    match mode {
        CombineMode::Add => {
            grad_out.expect_shape(a.shape())?;
            Ok((grad_out.clone(), grad_out.clone()))
        }
        CombineMode::MulBroadcast => {
            let (c, h, w) = a.dims3()?;
            let (bc, bh, bw) = b.dims3()?;
            grad_out.expect_shape(&[c, h, w])?;
            let mut d_a = Tensor::zeros(&[c, h, w])?;
            let mut d_b = Tensor::zeros(&[bc, bh, bw])?;
            if bc == c && bh == 1 && bw == 1 {
                for ch in 0..c {
                    let s = b.at3(ch, 0, 0);
                    let mut acc = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            let g = grad_out.at3(ch, y, x);
                            d_a.set3(ch, y, x, g * s);
                            acc += g * a.at3(ch, y, x);
                        }
                    }
                    d_b.set3(ch, 0, 0, acc);
                }
            } else if bc == 1 && bh == h && bw == w {
                for y in 0..h {
                    for x in 0..w {
                        let s = b.at3(0, y, x);
                        let mut acc = 0.0;
                        for ch in 0..c {
                            let g = grad_out.at3(ch, y, x);
                            d_a.set3(ch, y, x, g * s);
                            acc += g * a.at3(ch, y, x);
                        }
                        d_b.set3(0, y, x, acc);
                    }
                }
            } else {
                return Err(TensorError::DimMismatch {
                    axis: "broadcast",
                    expected: c,
                    got: bc,
                });
            }
            Ok((d_a, d_b))
        }
        CombineMode::ConcatChannels => {
            let (ca, h, w) = a.dims3()?;
            let (cb, _, _) = b.dims3()?;
            grad_out.expect_shape(&[ca + cb, h, w])?;
            let split = ca * h * w;
            let d_a = Tensor::new(&[ca, h, w], grad_out.data()[..split].to_vec())?;
            let d_b = Tensor::new(&[cb, h, w], grad_out.data()[split..].to_vec())?;
            Ok((d_a, d_b))
        }
    }
}

fn bilinear_scale(src: usize, dst: usize) -> f64 {
    if dst > 1 {
        (src - 1) as f64 / (dst - 1) as f64
    } else {
        0.0
    }
}

/// Bilinear upsampling with corner-aligned sampling.
///
/// The first and last samples coincide with the source corners, so
/// constant inputs map to constant outputs at any target size.
pub fn upsample_bilinear(input: &Tensor, target: (usize, usize)) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(TensorError::ZeroDim {
            axis: if th == 0 { 1 } else { 2 },
        });
    }
    let sy = bilinear_scale(h, th);
    let sx = bilinear_scale(w, tw);
    let mut out = Tensor::zeros(&[c, th, tw])?;
    for ch in 0..c {
        for ty in 0..th {
            let fy = ty as f64 * sy;
            let y0 = libm::floor(fy) as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for tx in 0..tw {
                let fx = tx as f64 * sx;
                let x0 = libm::floor(fx) as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let v = input.at3(ch, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + input.at3(ch, y0, x1) * (1.0 - wy) * wx
                    + input.at3(ch, y1, x0) * wy * (1.0 - wx)
                    + input.at3(ch, y1, x1) * wy * wx;
                out.set3(ch, ty, tx, v);
            }
        }
    }
    Ok(out)
}

/// VJP of [`upsample_bilinear`]: scatter of the interpolation weights.
pub fn upsample_bilinear_backward(
    input: &Tensor,
    target: (usize, usize),
    grad_out: &Tensor,
) -> Result<Tensor, TensorError> {
    let (c, h, w) = input.dims3()?;
    let (th, tw) = target;
    grad_out.expect_shape(&[c, th, tw])?;
    let sy = bilinear_scale(h, th);
    let sx = bilinear_scale(w, tw);
    let mut d_input = Tensor::zeros(&[c, h, w])?;
    for ch in 0..c {
        for ty in 0..th {
            let fy = ty as f64 * sy;
            let y0 = libm::floor(fy) as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for tx in 0..tw {
                let fx = tx as f64 * sx;
                let x0 = libm::floor(fx) as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let g = grad_out.at3(ch, ty, tx);
                d_input.add3(ch, y0, x0, g * (1.0 - wy) * (1.0 - wx));
                d_input.add3(ch, y0, x1, g * (1.0 - wy) * wx);
                d_input.add3(ch, y1, x0, g * wy * (1.0 - wx));
                d_input.add3(ch, y1, x1, g * wy * wx);
            }
        }
    }
    Ok(d_input)
}
