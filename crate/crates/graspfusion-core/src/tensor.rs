//! Dense multi-dimensional tensor in row-major order.
//!
//! The canonical feature layout is channels × height × width. Construction
//! enforces the two invariants every kernel relies on: the data length
//! matches the shape product, and every element is finite.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Error raised by tensor construction and by the shape checks of kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// A dimension on the named axis does not match what the operation needs.
    DimMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    /// The tensor has the wrong number of axes.
    RankMismatch { expected: usize, got: usize },
    /// Data length does not equal the product of the shape entries.
    LengthMismatch { expected: usize, got: usize },
    /// A shape entry is zero.
    ZeroDim { axis: usize },
    /// The effective kernel extent exceeds the padded input extent.
    KernelTooLarge {
        axis: &'static str,
        extent: usize,
        padded: usize,
    },
    /// A non-finite value was found at the given flat index.
    NonFinite { index: usize },
    /// The operation requires a non-empty spatial extent.
    EmptySpatial,
    /// A parameter failed validation (named for diagnostics).
    InvalidParam { what: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DimMismatch {
                axis,
                expected,
                got,
            } => write!(f, "dimension mismatch on axis {axis}: expected {expected}, got {got}"),
            TensorError::RankMismatch { expected, got } => {
                write!(f, "rank mismatch: expected {expected} axes, got {got}")
            }
            TensorError::LengthMismatch { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::ZeroDim { axis } => write!(f, "zero-sized dimension at axis {axis}"),
            TensorError::KernelTooLarge {
                axis,
                extent,
                padded,
            } => write!(
                f,
                "effective kernel extent {extent} exceeds padded input extent {padded} on axis {axis}"
            ),
            TensorError::NonFinite { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            TensorError::EmptySpatial => write!(f, "empty spatial extent"),
            TensorError::InvalidParam { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Dense real-valued tensor, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    ///
    /// Rejects zero dimensions, length mismatches, and non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = checked_len(shape)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Constant tensor of the given shape.
    pub fn filled(shape: &[usize], value: f64) -> Result<Self, TensorError> {
        let len = checked_len(shape)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite { index: 0 });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interpret as C×H×W, or fail with a rank error.
    pub fn dims3(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(TensorError::RankMismatch {
                expected: 3,
                got: other.len(),
            }),
        }
    }

    /// Interpret as H×W, or fail with a rank error.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [h, w] => Ok((*h, *w)),
            other => Err(TensorError::RankMismatch {
                expected: 2,
                got: other.len(),
            }),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> f64 {
        let (_, hh, ww) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w]
    }

    #[inline]
    pub(crate) fn set3(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let (_, hh, ww) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w] = v;
    }

    #[inline]
    pub(crate) fn add3(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let (_, hh, ww) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w] += v;
    }

    #[inline]
    pub fn at2(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.shape[1] + w]
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((a * s1 + b) * s2 + c) * s3 + d]
    }

    #[inline]
    pub(crate) fn add4(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((a * s1 + b) * s2 + c) * s3 + d] += v;
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Elementwise map into a new tensor; the result is finiteness-checked.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, TensorError> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Self::new(&self.shape, data)
    }

    /// Check every element is finite, reporting the first offender.
    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Require an exact shape match on every axis, naming the first mismatch.
    pub fn expect_shape(&self, shape: &[usize]) -> Result<(), TensorError> {
        if self.shape.len() != shape.len() {
            return Err(TensorError::RankMismatch {
                expected: shape.len(),
                got: self.shape.len(),
            });
        }
        const AXIS_NAMES: [&str; 4] = ["axis0", "axis1", "axis2", "axis3"];
        for (i, (&got, &expected)) in self.shape.iter().zip(shape).enumerate() {
            if got != expected {
                return Err(TensorError::DimMismatch {
                    axis: AXIS_NAMES.get(i).copied().unwrap_or("axis"),
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

fn checked_len(shape: &[usize]) -> Result<usize, TensorError> {
    let mut len = 1usize;
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 0 {
            return Err(TensorError::ZeroDim { axis });
        }
        len = len.checked_mul(dim).ok_or(TensorError::InvalidParam {
            what: "shape overflow",
        })?;
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn new_validates_length() {
        let err = Tensor::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(
            err,
            TensorError::LengthMismatch {
                expected: 6,
                got: 5
            }
        );
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(&[3], vec![1.0, f64::NAN, 2.0]).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { index: 1 });
        let err = Tensor::new(&[1], vec![f64::INFINITY]).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { index: 0 });
    }

    #[test]
    fn new_rejects_zero_dim() {
        let err = Tensor::new(&[2, 0, 3], vec![]).unwrap_err();
        assert_eq!(err, TensorError::ZeroDim { axis: 1 });
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(&[2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 2), 5.0);
        assert_eq!(t.at3(1, 0, 0), 6.0);
        assert_eq!(t.at3(1, 1, 1), 10.0);
    }

    #[test]
    fn expect_shape_names_offending_axis() {
        let t = Tensor::zeros(&[2, 4, 4]).unwrap();
        let err = t.expect_shape(&[2, 5, 4]).unwrap_err();
        assert_eq!(
            err,
            TensorError::DimMismatch {
                axis: "axis1",
                expected: 5,
                got: 4
            }
        );
    }
}
