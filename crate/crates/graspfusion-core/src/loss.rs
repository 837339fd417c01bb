//! Loss formulas and the grid-cell → mask-channel index mapping.
//!
//! Index contract: grid indices (i, j) and channels k are 1-based in the
//! public API; storage is 0-based internally and the mapping between the
//! two is tested.

use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{Tensor, TensorError};

/// Clamp bound for predicted probabilities inside the focal loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    /// A 1-based grid or channel index outside its valid range.
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        max: usize,
    },
    /// Mask shapes or counts disagree.
    Shape(TensorError),
    /// A loss term that must be non-negative was negative.
    NegativeInput { what: &'static str },
    /// Empty input where at least one element is required.
    Empty { what: &'static str },
    /// A weight or mask value outside its documented range.
    OutOfRange { what: &'static str },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::IndexOutOfRange { what, got, max } => {
                write!(f, "{what} index {got} outside 1..={max}")
            }
            LossError::Shape(e) => write!(f, "shape error: {e}"),
            LossError::NegativeInput { what } => write!(f, "{what} must be non-negative"),
            LossError::Empty { what } => write!(f, "{what} must be non-empty"),
            LossError::OutOfRange { what } => write!(f, "{what} out of range"),
        }
    }
}

impl core::error::Error for LossError {}

impl From<TensorError> for LossError {
    fn from(e: TensorError) -> Self {
        LossError::Shape(e)
    }
}

/// An S×S grid; `(i, j)` indexing is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub s: usize,
}

impl GridSpec {
    pub fn new(s: usize) -> Result<Self, LossError> {
        if s == 0 {
            return Err(LossError::Empty { what: "grid" });
        }
        Ok(Self { s })
    }

    pub fn cells(&self) -> usize {
        self.s * self.s
    }
}

/// Map a 1-based grid cell (i, j) to its 1-based mask channel
/// k = (i − 1)·S + j.
pub fn grid_to_channel(i: usize, j: usize, grid: &GridSpec) -> Result<usize, LossError> {
    if i < 1 || i > grid.s {
        return Err(LossError::IndexOutOfRange {
            what: "row",
            got: i,
            max: grid.s,
        });
    }
    if j < 1 || j > grid.s {
        return Err(LossError::IndexOutOfRange {
            what: "column",
            got: j,
            max: grid.s,
        });
    }
    Ok((i - 1) * grid.s + j)
}

/// Inverse of [`grid_to_channel`]: recover the 1-based (i, j) of channel k.
pub fn channel_to_grid(k: usize, grid: &GridSpec) -> Result<(usize, usize), LossError> {
    if k < 1 || k > grid.cells() {
        return Err(LossError::IndexOutOfRange {
            what: "channel",
            got: k,
            max: grid.cells(),
        });
    }
    Ok(((k - 1) / grid.s + 1, (k - 1) % grid.s + 1))
}

/// Soft Dice loss with squared-sum denominators:
/// `1 − (2·Σpq + ε) / (Σp² + Σq² + ε)`.
pub fn dice_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64, LossError> {
    target
        .expect_shape(pred.shape())
        .map_err(LossError::Shape)?;
    let mut dot = 0.0;
    let mut pp = 0.0;
    let mut qq = 0.0;
    for (&p, &q) in pred.data().iter().zip(target.data()) {
        dot += p * q;
        pp += p * p;
        qq += q * q;
    }
    Ok(1.0 - (2.0 * dot + eps) / (pp + qq + eps))
}

/// Gradient of [`dice_loss`] with respect to the prediction.
pub fn dice_loss_backward(pred: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor, LossError> {
    target
        .expect_shape(pred.shape())
        .map_err(LossError::Shape)?;
    let mut dot = 0.0;
    let mut pp = 0.0;
    let mut qq = 0.0;
    for (&p, &q) in pred.data().iter().zip(target.data()) {
        dot += p * q;
        pp += p * p;
        qq += q * q;
    }
    let denom = pp + qq + eps;
    let num = 2.0 * dot + eps;
    let data: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &q)| -(2.0 * q * denom - num * 2.0 * p) / (denom * denom))
        .collect();
    Tensor::new(pred.shape(), data).map_err(LossError::Shape)
}

/// Per-element Focal loss: `−α_t (1 − p_t)^γ ln p_t` with
/// `p_t = pred` when the target is positive and `1 − pred` otherwise.
/// The prediction is clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub fn focal_loss(pred_prob: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    let p = pred_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (p_t, alpha_t) = if target {
        (p, alpha)
    } else {
        (1.0 - p, 1.0 - alpha)
    };
    -alpha_t * libm::pow(1.0 - p_t, gamma) * libm::log(p_t)
}

/// Derivative of [`focal_loss`] with respect to the prediction.
///
/// Zero outside the clamp interval, matching the forward exactly.
pub fn focal_loss_backward(pred_prob: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pred_prob) {
        return 0.0;
    }
    let (p_t, alpha_t, sign) = if target {
        (pred_prob, alpha, 1.0)
    } else {
        (1.0 - pred_prob, 1.0 - alpha, -1.0)
    };
    // d/dp_t [ -α (1-p_t)^γ ln p_t ]
    //   = α γ (1-p_t)^(γ-1) ln p_t − α (1-p_t)^γ / p_t
    let d_pt = if gamma == 0.0 {
        -alpha_t / p_t
    } else {
        alpha_t * gamma * libm::pow(1.0 - p_t, gamma - 1.0) * libm::log(p_t)
            - alpha_t * libm::pow(1.0 - p_t, gamma) / p_t
    };
    sign * d_pt
}

/// How a map of per-cell focal terms is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FocalReduction {
    /// Mean over cells with a positive target (0 when there are none).
    #[default]
    MeanOverPositives,
    /// Plain sum over all cells.
    Sum,
}

/// Reduce per-cell focal terms over an S×S category map.
///
/// `cells` pairs each predicted probability with whether its target is
/// positive.
pub fn focal_loss_map(
    cells: &[(f64, bool)],
    alpha: f64,
    gamma: f64,
    reduction: FocalReduction,
) -> f64 {
    match reduction {
        FocalReduction::MeanOverPositives => {
            let positives = cells.iter().filter(|(_, t)| *t).count();
            if positives == 0 {
                return 0.0;
            }
            let sum: f64 = cells
                .iter()
                .filter(|(_, t)| *t)
                .map(|&(p, t)| focal_loss(p, t, alpha, gamma))
                .sum();
            sum / positives as f64
        }
        FocalReduction::Sum => cells
            .iter()
            .map(|&(p, t)| focal_loss(p, t, alpha, gamma))
            .sum(),
    }
}

/// Loss weights and constants; defaults follow the canonical choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Mask-loss weight λ.
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda > 0.0) {
            return Err(LossError::OutOfRange { what: "lambda" });
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(LossError::OutOfRange {
                what: "focal_gamma",
            });
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(LossError::OutOfRange {
                what: "focal_alpha",
            });
        }
        if !(self.dice_epsilon > 0.0) {
            return Err(LossError::OutOfRange {
                what: "dice_epsilon",
            });
        }
        Ok(())
    }
}

/// One image's mask predictions, targets, and category map.
///
/// Channel k (1-based) corresponds to grid cell (i, j) through
/// [`grid_to_channel`]; a channel is a positive sample when its cell's
/// category id is non-zero.
#[derive(Debug, Clone)]
pub struct MaskBatch {
    grid: GridSpec,
    predicted: Vec<Tensor>,
    target: Vec<Tensor>,
    categories: Vec<u32>,
}

impl MaskBatch {
    pub fn new(
        grid: GridSpec,
        predicted: Vec<Tensor>,
        target: Vec<Tensor>,
        categories: Vec<u32>,
    ) -> Result<Self, LossError> {
        let cells = grid.cells();
        if predicted.len() != cells {
            return Err(LossError::Shape(TensorError::DimMismatch {
                axis: "mask_channels",
                expected: cells,
                got: predicted.len(),
            }));
        }
        if target.len() != cells {
            return Err(LossError::Shape(TensorError::DimMismatch {
                axis: "target_channels",
                expected: cells,
                got: target.len(),
            }));
        }
        if categories.len() != cells {
            return Err(LossError::Shape(TensorError::DimMismatch {
                axis: "category_cells",
                expected: cells,
                got: categories.len(),
            }));
        }
        for (p, t) in predicted.iter().zip(&target) {
            t.expect_shape(p.shape()).map_err(LossError::Shape)?;
            if p.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(LossError::OutOfRange {
                    what: "predicted mask value",
                });
            }
            if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(LossError::OutOfRange {
                    what: "target mask value",
                });
            }
        }
        Ok(Self {
            grid,
            predicted,
            target,
            categories,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn predicted(&self) -> &[Tensor] {
        &self.predicted
    }

    pub fn target(&self) -> &[Tensor] {
        &self.target
    }

    /// Whether 1-based channel k is a positive sample.
    pub fn pos_indicator(&self, k: usize) -> Result<bool, LossError> {
        if k < 1 || k > self.grid.cells() {
            return Err(LossError::IndexOutOfRange {
                what: "channel",
                got: k,
                max: self.grid.cells(),
            });
        }
        Ok(self.categories[k - 1] > 0)
    }

    pub fn positive_count(&self) -> usize {
        self.categories.iter().filter(|&&c| c > 0).count()
    }
}

/// Mask loss: mean Dice loss over positive channels; 0 when there are no
/// positives.
pub fn mask_loss(batch: &MaskBatch, eps: f64) -> Result<f64, LossError> {
    let n_pos = batch.positive_count();
    if n_pos == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 1..=batch.grid.cells() {
        if batch.pos_indicator(k)? {
            sum += dice_loss(&batch.predicted[k - 1], &batch.target[k - 1], eps)?;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Gradient of [`mask_loss`] with respect to every predicted mask.
///
/// Channels with a background cell get a zero gradient.
pub fn mask_loss_backward(batch: &MaskBatch, eps: f64) -> Result<Vec<Tensor>, LossError> {
    let n_pos = batch.positive_count();
    let mut grads = Vec::with_capacity(batch.grid.cells());
    for k in 1..=batch.grid.cells() {
        if n_pos > 0 && batch.pos_indicator(k)? {
            let mut g = dice_loss_backward(&batch.predicted[k - 1], &batch.target[k - 1], eps)?;
            let inv = 1.0 / n_pos as f64;
            for v in g.data_mut() {
                *v *= inv;
            }
            grads.push(g);
        } else {
            grads.push(Tensor::zeros(batch.predicted[k - 1].shape())?);
        }
    }
    Ok(grads)
}

/// Total training loss `L = L_cate + λ · L_mask`.
pub fn total_loss(l_cate: f64, l_mask: f64, weights: &LossWeights) -> Result<f64, LossError> {
    weights.validate()?;
    if l_cate < 0.0 {
        return Err(LossError::NegativeInput { what: "l_cate" });
    }
    if l_mask < 0.0 {
        return Err(LossError::NegativeInput { what: "l_mask" });
    }
    Ok(l_cate + weights.lambda * l_mask)
}

/// Mean smooth-L1 over element pairs:
/// `z = 0.5 d²` when `|d| < 1`, else `|d| − 0.5`.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    if pred.is_empty() {
        return Err(LossError::Empty {
            what: "smooth_l1 input",
        });
    }
    if pred.len() != target.len() {
        return Err(LossError::Shape(TensorError::LengthMismatch {
            expected: pred.len(),
            got: target.len(),
        }));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`smooth_l1`] with respect to the prediction.
pub fn smooth_l1_backward(pred: &[f64], target: &[f64]) -> Result<Vec<f64>, LossError> {
    if pred.is_empty() {
        return Err(LossError::Empty {
            what: "smooth_l1 input",
        });
    }
    if pred.len() != target.len() {
        return Err(LossError::Shape(TensorError::LengthMismatch {
            expected: pred.len(),
            got: target.len(),
        }));
    }
    let inv = 1.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            inv * if d.abs() < 1.0 { d } else { d.signum() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn grid_channel_examples() {
        let g = GridSpec::new(12).unwrap();
        assert_eq!(grid_to_channel(1, 1, &g).unwrap(), 1);
        assert_eq!(grid_to_channel(2, 3, &g).unwrap(), 15);
        assert_eq!(grid_to_channel(12, 12, &g).unwrap(), 144);
        assert!(grid_to_channel(0, 1, &g).is_err());
        assert!(grid_to_channel(1, 13, &g).is_err());
    }

    #[test]
    fn grid_channel_round_trip() {
        for s in 1..=64 {
            let g = GridSpec::new(s).unwrap();
            for i in 1..=s {
                for j in 1..=s {
                    let k = grid_to_channel(i, j, &g).unwrap();
                    assert!(k >= 1 && k <= g.cells());
                    assert_eq!(channel_to_grid(k, &g).unwrap(), (i, j));
                }
            }
        }
    }

    #[test]
    fn dice_loss_cases() {
        let ones = Tensor::filled(&[2, 2], 1.0).unwrap();
        let zeros = Tensor::zeros(&[2, 2]).unwrap();
        let eps = 1e-9;
        assert!(dice_loss(&ones, &ones, eps).unwrap().abs() < 1e-9);
        assert!((dice_loss(&ones, &zeros, eps).unwrap() - 1.0).abs() < 1e-8);

        // pred=[1,0], target=[1,1]: 1 − 2/3
        let pred = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let target = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        let v = dice_loss(&pred, &target, 1e-12).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn dice_loss_symmetric_on_binary() {
        let a = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(&[4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let eps = 1e-6;
        assert_eq!(
            dice_loss(&a, &b, eps).unwrap(),
            dice_loss(&b, &a, eps).unwrap()
        );
    }

    #[test]
    fn focal_loss_cases() {
        // confident correct prediction
        assert!(focal_loss(1.0, true, 0.25, 2.0).abs() < 1e-9);
        // gamma=0, alpha=1 reduces to cross-entropy
        for &p in &[0.1, 0.3, 0.5, 0.9] {
            let ce = -libm::log(p);
            assert!((focal_loss(p, true, 1.0, 0.0) - ce).abs() < 1e-12);
        }
        // frozen hand value: 0.25 · 0.25 · ln 2
        let v = focal_loss(0.5, true, 0.25, 2.0);
        assert!((v - 0.04332169878499658).abs() < 1e-15);
        assert!((v - 0.043321).abs() < 1e-6);
    }

    #[test]
    fn focal_loss_monotone_in_pt() {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let v = focal_loss(p, true, 0.25, 2.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn focal_map_reduction() {
        let cells = [(0.5, true), (0.9, false), (0.5, true)];
        let mean = focal_loss_map(&cells, 0.25, 2.0, FocalReduction::MeanOverPositives);
        let each = focal_loss(0.5, true, 0.25, 2.0);
        assert!((mean - each).abs() < 1e-15);
        let sum = focal_loss_map(&cells, 0.25, 2.0, FocalReduction::Sum);
        assert!((sum - (2.0 * each + focal_loss(0.9, false, 0.25, 2.0))).abs() < 1e-15);
        assert_eq!(
            focal_loss_map(
                &[(0.4, false)],
                0.25,
                2.0,
                FocalReduction::MeanOverPositives
            ),
            0.0
        );
    }

    fn tiny_batch(categories: Vec<u32>, preds: Vec<Tensor>, targets: Vec<Tensor>) -> MaskBatch {
        MaskBatch::new(GridSpec::new(2).unwrap(), preds, targets, categories).unwrap()
    }

    #[test]
    fn mask_loss_background_only_is_zero() {
        let blank = Tensor::zeros(&[2, 2]).unwrap();
        let batch = tiny_batch(
            vec![0, 0, 0, 0],
            vec![blank.clone(); 4],
            vec![blank.clone(); 4],
        );
        assert_eq!(mask_loss(&batch, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn mask_loss_perfect_positive_is_zero() {
        let m = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let blank = Tensor::zeros(&[1, 2]).unwrap();
        let batch = tiny_batch(
            vec![5, 0, 0, 0],
            vec![m.clone(), blank.clone(), blank.clone(), blank.clone()],
            vec![m.clone(), blank.clone(), blank.clone(), blank.clone()],
        );
        assert!(mask_loss(&batch, 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn mask_loss_averages_positive_channels() {
        // channel 1: dice 1/3 (pred [1,0] vs target [1,1])
        // channel 2: dice 1 (pred [1,0] vs target [0,0] ... eps-exact)
        let p = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let t1 = Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap();
        let t2 = Tensor::zeros(&[1, 2]).unwrap();
        let blank = Tensor::zeros(&[1, 2]).unwrap();
        let batch = tiny_batch(
            vec![1, 2, 0, 0],
            vec![p.clone(), p.clone(), blank.clone(), blank.clone()],
            vec![t1, t2, blank.clone(), blank.clone()],
        );
        let v = mask_loss(&batch, 1e-12).unwrap();
        assert!((v - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_formula() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, &w).unwrap(), 0.0);
        let v = total_loss(0.2, 0.1, &w).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 2.0, &w).unwrap(), 6.0);
        assert!(total_loss(-0.1, 0.0, &w).is_err());
        assert!(total_loss(0.0, -0.1, &w).is_err());
    }

    #[test]
    fn smooth_l1_both_branches_and_knee() {
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((smooth_l1(&[0.5], &[0.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&[2.0], &[0.0]).unwrap() - 1.5).abs() < 1e-15);
        // |d| = 1 lands on the second branch; both agree there
        assert!((smooth_l1(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(smooth_l1(&[], &[]).is_err());
    }

    #[test]
    fn smooth_l1_gradient_is_continuous_at_knee() {
        // central differences straddling |d| = 1
        let f = |d: f64| smooth_l1(&[d], &[0.0]).unwrap();
        let h = 1e-6;
        let below = (f(1.0 - h + h) - f(1.0 - h - h)) / (2.0 * h);
        let above = (f(1.0 + h + h) - f(1.0 + h - h)) / (2.0 * h);
        assert!((below - above).abs() < 1e-5, "below={below} above={above}");
        let g = smooth_l1_backward(&[1.0], &[0.0]).unwrap();
        assert_eq!(g, vec![1.0]);
    }
}
