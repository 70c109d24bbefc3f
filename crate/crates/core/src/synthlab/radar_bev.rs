use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuser::{FeatureMap, Modality};
use crate::geomkit::{voxelize, RadarPoint, RangeSpec, VoxelSpec, VOXEL_FEATURES};
use crate::numkit::Tensor;
use crate::viewtrans::BevGrid;

/// Vertical extent of the radar volume and the height of one z slab.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarBevSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub slab: f64,
}

impl Default for RadarBevSpec {
    fn default() -> Self {
        RadarBevSpec {
            z_min: -1.2,
            z_max: 1.2,
            slab: 1.2,
        }
    }
}

impl RadarBevSpec {
    /// Voxels whose footprint is one BEV cell.
    pub fn voxel(&self, grid: &BevGrid) -> VoxelSpec {
        VoxelSpec {
            size: [grid.resolution, grid.resolution, self.slab],
        }
    }

    pub fn slabs(&self, grid: &BevGrid) -> usize {
        self.voxel(grid).dims(&radar_range(grid, self))[2]
    }

    pub fn channels(&self, grid: &BevGrid) -> usize {
        self.slabs(grid) * VOXEL_FEATURES
    }
}

/// The point-cloud range covered by `grid` and the slab stack.
pub fn radar_range(grid: &BevGrid, spec: &RadarBevSpec) -> RangeSpec {
    RangeSpec {
        min: [grid.x_min, grid.y_min, spec.z_min],
        max: [grid.x_max(), grid.y_max(), spec.z_max],
    }
}

/// Voxelize and flatten over z: channel `slab·5 + f` holds pooled feature
/// `f` (mean x, y, z, v_r, count) of the voxel in that slab.
pub fn radar_to_bev(points: &[RadarPoint], grid: &BevGrid, voxel: &VoxelSpec, range: &RangeSpec) -> Result<FeatureMap> {
    grid.validate()?;
    let dims = voxel.dims(range);
    let aligned = (range.min[0] - grid.x_min).abs() < 1e-9
        && (range.min[1] - grid.y_min).abs() < 1e-9
        && (voxel.size[0] - grid.resolution).abs() < 1e-12
        && (voxel.size[1] - grid.resolution).abs() < 1e-12;
    if dims[0] != grid.rows || dims[1] != grid.cols || !aligned {
        return Err(Error::Config(format!(
            "voxel grid {:?} over {:?}..{:?} does not line up with the {}x{} BEV grid at {} m",
            dims, range.min, range.max, grid.rows, grid.cols, grid.resolution
        )));
    }
    let vg = voxelize(points, voxel, range)?;
    let cells = grid.cells();
    let mut t = Tensor::zeros(&[dims[2] * VOXEL_FEATURES, grid.rows, grid.cols]);
    let data = t.data_mut();
    for ([ix, iy, iz], v) in &vg.voxels {
        for (f, val) in v.feature.iter().enumerate() {
            data[(iz * VOXEL_FEATURES + f) * cells + ix * grid.cols + iy] = *val;
        }
    }
    FeatureMap::new(t, Modality::Radar, grid.resolution)
}
