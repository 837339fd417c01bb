//! JSON import/export for attention module parameters.
//!
//! Tensors serialize as shape plus flat row-major values, so hand-crafted
//! fixtures can be loaded for tests and parameter sets can cross the
//! process boundary.

use graspfusion_core::attention::{AsppConfig, CamParams, SamParams};
use graspfusion_core::ops::{ConvSpec, Mlp2Params};
use graspfusion_core::tensor::{Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("invalid tensor: {0}")]
    Tensor(#[from] TensorError),
}

/// Shape + flat row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDto {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorDto {
    pub fn to_core(&self) -> Result<Tensor, ParamsError> {
        Ok(Tensor::new(&self.shape, self.data.clone())?)
    }

    pub fn from_core(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2ParamsDto {
    pub w1: TensorDto,
    pub w2: TensorDto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<Vec<f64>>,
}

impl Mlp2ParamsDto {
    pub fn to_core(&self) -> Result<Mlp2Params, ParamsError> {
        Ok(Mlp2Params::new(
            self.w1.to_core()?,
            self.w2.to_core()?,
            self.b1.clone(),
            self.b2.clone(),
        )?)
    }

    pub fn from_core(p: &Mlp2Params) -> Self {
        Self {
            w1: TensorDto::from_core(&p.w1),
            w2: TensorDto::from_core(&p.w2),
            b1: p.b1.clone(),
            b2: p.b2.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpecDto {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub weights: TensorDto,
    pub bias: Vec<f64>,
}

impl ConvSpecDto {
    pub fn to_core(&self) -> Result<ConvSpec, ParamsError> {
        Ok(ConvSpec::new(
            self.out_channels,
            self.kernel,
            self.padding,
            self.dilation,
            self.weights.to_core()?,
            self.bias.clone(),
        )?)
    }

    pub fn from_core(s: &ConvSpec) -> Self {
        Self {
            out_channels: s.out_channels,
            kernel: s.kernel,
            padding: s.padding,
            dilation: s.dilation,
            weights: TensorDto::from_core(&s.weights),
            bias: s.bias.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamParamsDto {
    pub mlp: Mlp2ParamsDto,
}

impl CamParamsDto {
    pub fn to_core(&self) -> Result<CamParams, ParamsError> {
        Ok(CamParams::new(self.mlp.to_core()?)?)
    }

    pub fn from_core(p: &CamParams) -> Self {
        Self {
            mlp: Mlp2ParamsDto::from_core(&p.mlp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamParamsDto {
    pub conv: ConvSpecDto,
}

impl SamParamsDto {
    pub fn to_core(&self) -> Result<SamParams, ParamsError> {
        Ok(SamParams::new(self.conv.to_core()?)?)
    }

    pub fn from_core(p: &SamParams) -> Self {
        Self {
            conv: ConvSpecDto::from_core(p.conv()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsppConfigDto {
    pub branch_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub include_image_pool: bool,
    pub branches: Vec<ConvSpecDto>,
    pub fuse: ConvSpecDto,
}

impl AsppConfigDto {
    pub fn to_core(&self) -> Result<AsppConfig, ParamsError> {
        Ok(AsppConfig::new(
            self.branch_channels,
            self.dilation_rates.clone(),
            self.include_image_pool,
            self.branches
                .iter()
                .map(|b| b.to_core())
                .collect::<Result<Vec<_>, _>>()?,
            self.fuse.to_core()?,
        )?)
    }

    pub fn from_core(cfg: &AsppConfig) -> Self {
        Self {
            branch_channels: cfg.branch_channels(),
            dilation_rates: cfg.dilation_rates().to_vec(),
            include_image_pool: cfg.include_image_pool(),
            branches: cfg.branches().iter().map(ConvSpecDto::from_core).collect(),
            fuse: ConvSpecDto::from_core(cfg.fuse()),
        }
    }
}
