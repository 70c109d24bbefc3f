use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RadarPoint, RangeSpec};

/// Pooled voxel feature width: mean x, y, z, v_r and the point count.
pub const VOXEL_FEATURES: usize = 5;

/// Voxel edge lengths in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpec {
    pub size: [f64; 3],
}

impl VoxelSpec {
    /// 0.16 m × 0.16 m × 0.24 m.
    pub const FULL_SCALE: VoxelSpec = VoxelSpec {
        size: [0.16, 0.16, 0.24],
    };

    /// Whole voxels per axis. A trailing partial voxel is dropped.
    pub fn dims(&self, range: &RangeSpec) -> [usize; 3] {
        let mut d = [0; 3];
        for a in 0..3 {
            d[a] = (range.extent(a) / self.size[a] + 1e-9).floor() as usize;
        }
        d
    }

    /// The part of `range` covered by whole voxels.
    pub fn effective_range(&self, range: &RangeSpec) -> RangeSpec {
        let d = self.dims(range);
        let mut max = range.max;
        for a in 0..3 {
            max[a] = self.lower_bound(range, a, d[a]);
        }
        RangeSpec { min: range.min, max }
    }

    /// Lower edge of voxel `i` along `axis` (upper edge of voxel `i − 1`).
    pub fn lower_bound(&self, range: &RangeSpec, axis: usize, i: usize) -> f64 {
        range.min[axis] + i as f64 * self.size[axis]
    }

    pub fn validate(&self, range: &RangeSpec) -> Result<()> {
        range.validate()?;
        if self.size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("voxel sizes must be positive: {:?}", self.size)));
        }
        if self.dims(range).contains(&0) {
            return Err(Error::Config("voxel larger than the range on some axis".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    pub points: Vec<RadarPoint>,
    /// Mean x, y, z, v_r followed by the point count.
    pub feature: [f64; VOXEL_FEATURES],
}

/// Sparse voxel occupancy keyed by `(ix, iy, iz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub spec: VoxelSpec,
    pub range: RangeSpec,
    pub dims: [usize; 3],
    pub voxels: BTreeMap<[usize; 3], Voxel>,
}

impl VoxelGrid {
    pub fn total_points(&self) -> usize {
        self.voxels.values().map(|v| v.points.len()).sum()
    }
}

/// Assign each point to the half-open voxel containing it and mean-pool the
/// attributes.
///
/// Points must lie inside the voxel grid, i.e. inside
/// [`VoxelSpec::effective_range`]; anything else is a contract violation.
pub fn voxelize(points: &[RadarPoint], spec: &VoxelSpec, range: &RangeSpec) -> Result<VoxelGrid> {
    spec.validate(range)?;
    let dims = spec.dims(range);
    let eff = spec.effective_range(range);
    let mut voxels: BTreeMap<[usize; 3], Voxel> = BTreeMap::new();
    for p in points {
        let c = p.xyz();
        if !eff.contains(c) {
            return Err(Error::Contract(format!(
                "point {c:?} outside voxel grid {:?}..{:?}; filter the cloud first",
                eff.min, eff.max
            )));
        }
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let mut i = (((c[a] - range.min[a]) / spec.size[a]).floor().max(0.0) as usize).min(dims[a] - 1);
            // floor() can land one voxel off when the coordinate sits on an edge
            while i > 0 && c[a] < spec.lower_bound(range, a, i) {
                i -= 1;
            }
            while i + 1 < dims[a] && c[a] >= spec.lower_bound(range, a, i + 1) {
                i += 1;
            }
            idx[a] = i;
        }
        voxels
            .entry(idx)
            .or_insert_with(|| Voxel {
                points: Vec::new(),
                feature: [0.0; VOXEL_FEATURES],
            })
            .points
            .push(*p);
    }
    for v in voxels.values_mut() {
        let n = v.points.len() as f64;
        let mut f = [0.0; VOXEL_FEATURES];
        for p in &v.points {
            f[0] += p.x;
            f[1] += p.y;
            f[2] += p.z;
            f[3] += p.v_r;
        }
        for x in f.iter_mut().take(4) {
            *x /= n;
        }
        f[4] = n;
        v.feature = f;
    }
    Ok(VoxelGrid {
        spec: *spec,
        range: *range,
        dims,
        voxels,
    })
}
