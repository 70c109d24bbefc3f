use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shared BEV raster. Rows index x (forward), columns index y (left).
/// Cell `(r, c)` covers `[x_min + r·res, x_min + (r+1)·res) ×
/// [y_min + c·res, y_min + (c+1)·res)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevGrid {
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
    pub x_min: f64,
    pub y_min: f64,
}

impl Default for BevGrid {
    fn default() -> Self {
        BevGrid {
            rows: 32,
            cols: 32,
            resolution: 0.4,
            x_min: 0.0,
            y_min: -6.4,
        }
    }
}

impl BevGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("BEV grid must have at least one cell".into()));
        }
        if !(self.resolution > 0.0) || !self.x_min.is_finite() || !self.y_min.is_finite() {
            return Err(Error::Config(format!("invalid BEV grid {:?}", self)));
        }
        Ok(())
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.rows as f64 * self.resolution
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.cols as f64 * self.resolution
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell containing `(x, y)`, if any.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = ((x - self.x_min) / self.resolution).floor();
        let c = ((y - self.y_min) / self.resolution).floor();
        if r >= 0.0 && c >= 0.0 && (r as usize) < self.rows && (c as usize) < self.cols {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// Center of cell `(r, c)` in meters.
    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.x_min + (r as f64 + 0.5) * self.resolution,
            self.y_min + (c as f64 + 0.5) * self.resolution,
        )
    }
}
