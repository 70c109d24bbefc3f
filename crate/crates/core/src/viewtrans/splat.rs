//! Splat step: sum-pool frustum cells into the BEV cells under them.

use crate::error::{Error, Result};
use crate::fuser::{FeatureMap, Modality};
use crate::numkit::Tensor;
use crate::par;

use super::{BevGrid, CameraModel, DepthBins};

/// BEV-frame 3D position of every frustum cell, indexed `(d·H + row)·W + col`.
pub fn frustum_points(cam: &CameraModel, bins: &DepthBins) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(bins.count * cam.height * cam.width);
    for d in 0..bins.count {
        let z = bins.center(d);
        for row in 0..cam.height {
            for col in 0..cam.width {
                pts.push(cam.unproject(col as f64, row as f64, z));
            }
        }
    }
    pts
}

/// Precomputed frustum-cell → BEV-cell assignment for one camera, depth
/// binning and grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatPlan {
    pub grid: BevGrid,
    pub bins: usize,
    pub image: (usize, usize),
    targets: Vec<Option<usize>>,
}

impl SplatPlan {
    pub fn new(cam: &CameraModel, bins: &DepthBins, grid: BevGrid) -> Result<Self> {
        cam.validate()?;
        bins.validate()?;
        grid.validate()?;
        let targets = frustum_points(cam, bins)
            .into_iter()
            .map(|p| grid.cell_of(p[0], p[1]).map(|(r, c)| r * grid.cols + c))
            .collect();
        Ok(SplatPlan {
            grid,
            bins: bins.count,
            image: (cam.height, cam.width),
            targets,
        })
    }

    /// Flat BEV cell of frustum cell `(d, row, col)`, if it lands on the grid.
    pub fn target(&self, d: usize, row: usize, col: usize) -> Option<usize> {
        self.targets[(d * self.image.0 + row) * self.image.1 + col]
    }

    pub fn in_range_cells(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    fn frustum_cells(&self) -> usize {
        self.targets.len()
    }

    fn check_frustum(&self, frustum: &Tensor, op: &'static str) -> Result<usize> {
        if frustum.rank() != 4 {
            return Err(Error::shape(
                op,
                format!("expected [C, D, H, W], got {:?}", frustum.shape()),
            ));
        }
        let c = frustum.dim(0);
        frustum.expect_shape(op, &[c, self.bins, self.image.0, self.image.1])?;
        Ok(c)
    }

    /// `[C, D, H, W]` → `[C, rows, cols]`.
    pub fn splat(&self, frustum: &Tensor) -> Result<Tensor> {
        let c = self.check_frustum(frustum, "splat_to_bev")?;
        let (n, cells) = (self.frustum_cells(), self.grid.cells());
        let data = frustum.data();
        let channels = par::map_chunks(c, 1, |range| {
            let mut out = vec![0.0; range.len() * cells];
            for (i, ch) in range.enumerate() {
                let src = &data[ch * n..(ch + 1) * n];
                let dst = &mut out[i * cells..(i + 1) * cells];
                for (v, t) in src.iter().zip(&self.targets) {
                    if let Some(t) = t {
                        dst[*t] += v;
                    }
                }
            }
            out
        });
        Tensor::new(vec![c, self.grid.rows, self.grid.cols], channels.concat())
    }

    /// Adjoint of [`splat`](Self::splat): every frustum cell reads the
    /// gradient of its BEV cell; off-grid cells get zero.
    pub fn backward(&self, dbev: &Tensor) -> Result<Tensor> {
        if dbev.rank() != 3 {
            return Err(Error::shape(
                "splat_backward",
                format!("expected [C, rows, cols], got {:?}", dbev.shape()),
            ));
        }
        let c = dbev.dim(0);
        dbev.expect_shape("splat_backward", &[c, self.grid.rows, self.grid.cols])?;
        let (n, cells) = (self.frustum_cells(), self.grid.cells());
        let mut out = Vec::with_capacity(c * n);
        for ch in 0..c {
            let g = &dbev.data()[ch * cells..(ch + 1) * cells];
            out.extend(self.targets.iter().map(|t| t.map_or(0.0, |t| g[t])));
        }
        Tensor::new(vec![c, self.bins, self.image.0, self.image.1], out)
    }
}

/// Sum-pool a lifted `[C, D, H, W]` frustum onto the plan's BEV grid.
pub fn splat_to_bev(frustum: &Tensor, plan: &SplatPlan) -> Result<FeatureMap> {
    FeatureMap::new(plan.splat(frustum)?, Modality::Camera, plan.grid.resolution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cell_lands_where_the_ray_says() {
        let cam = CameraModel::toy();
        let bins = DepthBins::new(4, 2.0, 10.0).unwrap();
        let grid = BevGrid::default();
        let plan = SplatPlan::new(&cam, &bins, grid).unwrap();
        // Bin 2 is centered at 7 m.
        let (d, row, col) = (2, 3, 20);
        let mut f = Tensor::zeros(&[1, 4, 8, 32]);
        f.data_mut()[(d * 8 + row) * 32 + col] = 2.5;
        let bev = plan.splat(&f).unwrap();
        // x = depth = 7, y = -(20 - 15.5)/16·7 = -1.96875.
        let (r, c) = grid.cell_of(7.0, -(20.0 - 15.5) / 16.0 * 7.0).unwrap();
        assert_eq!((r, c), (17, 11));
        let nz: Vec<usize> = (0..bev.len()).filter(|i| bev.data()[*i] != 0.0).collect();
        assert_eq!(nz, vec![r * 32 + c]);
        assert_eq!(bev.data()[r * 32 + c], 2.5);
    }

    #[test]
    fn backward_is_adjoint() {
        let cam = CameraModel::toy();
        let bins = DepthBins::default();
        let plan = SplatPlan::new(&cam, &bins, BevGrid::default()).unwrap();
        let f = Tensor::from_fn(&[2, 16, 8, 32], |i| ((i * 7919) % 13) as f64 - 6.0);
        let g = Tensor::from_fn(&[2, 32, 32], |i| ((i * 104729) % 11) as f64 - 5.0);
        let lhs = plan.splat(&f).unwrap().dot(&g);
        let rhs = f.dot(&plan.backward(&g).unwrap());
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
