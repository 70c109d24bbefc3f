use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{map_to_tokens, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Radar,
    Camera,
    Fused,
}

/// A `[C, H, W]` feature grid with its sensor tag and cell size in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub modality: Modality,
    pub resolution: f64,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, modality: Modality, resolution: f64) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::shape(
                "feature_map",
                format!("expected [C, H, W], got {:?}", tensor.shape()),
            ));
        }
        Ok(FeatureMap {
            tensor,
            modality,
            resolution,
        })
    }

    pub fn channels(&self) -> usize {
        self.tensor.dim(0)
    }

    pub fn height(&self) -> usize {
        self.tensor.dim(1)
    }

    pub fn width(&self) -> usize {
        self.tensor.dim(2)
    }

    pub fn tokens(&self) -> Vec<f64> {
        map_to_tokens(self.tensor.data(), self.channels())
    }

    /// Both maps must share shape and grid.
    pub fn check_compatible(&self, other: &FeatureMap, op: &'static str) -> Result<()> {
        other.tensor.expect_shape(op, self.tensor.shape())?;
        if (self.resolution - other.resolution).abs() > 1e-12 {
            return Err(Error::shape(
                op,
                format!("grid resolution mismatch: {} vs {}", self.resolution, other.resolution),
            ));
        }
        Ok(())
    }
}
