use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomkit::{RadarPoint, RigidTransform};
use crate::numkit::Tensor;

/// Pinhole camera over an image feature grid.
///
/// `extrinsic` maps BEV/radar coordinates into the camera frame (x right,
/// y down, z forward). Pixel `(row, col)` sits at image coordinate
/// `(v, u) = (row, col)`. Depth means camera-frame z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: RigidTransform,
    pub height: usize,
    pub width: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSize {
    height: usize,
    width: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    intrinsics: Intrinsics,
    extrinsic: [[f64; 4]; 4],
    image_size: ImageSize,
}

impl CameraModel {
    /// Forward-looking camera at the BEV origin over an 8×32 feature grid.
    pub fn toy() -> Self {
        CameraModel {
            fx: 16.0,
            fy: 8.0,
            cx: 15.5,
            cy: 3.5,
            extrinsic: RigidTransform {
                rotation: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
                ..RigidTransform::identity()
            },
            height: 8,
            width: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Config(format!(
                "camera intrinsics must have positive focal lengths (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("camera image size must be nonzero".into()));
        }
        if self.extrinsic.flip_x || self.extrinsic.flip_y || self.extrinsic.scale != 1.0 {
            return Err(Error::Config("camera extrinsic must be a proper rigid motion".into()));
        }
        self.extrinsic.validate()
    }

    /// `(u, v, depth)` of a BEV-frame point, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let q = self.extrinsic.apply_point(p);
        if q[2] <= 0.0 {
            return None;
        }
        Some((self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2]))
    }

    /// BEV-frame point at image position `(u, v)` and depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let q = [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth];
        self.extrinsic.inverse().apply_point(q)
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let f: CalibrationFile = serde_json::from_reader(r)?;
        let cam = CameraModel {
            fx: f.intrinsics.fx,
            fy: f.intrinsics.fy,
            cx: f.intrinsics.cx,
            cy: f.intrinsics.cy,
            extrinsic: RigidTransform::from_matrix(&f.extrinsic)?,
            height: f.image_size.height,
            width: f.image_size.width,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let f = CalibrationFile {
            intrinsics: Intrinsics {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
            },
            extrinsic: self.extrinsic.to_matrix(),
            image_size: ImageSize {
                height: self.height,
                width: self.width,
            },
        };
        serde_json::to_writer_pretty(w, &f)?;
        Ok(())
    }
}

/// Uniform depth bins; bin `i` is represented by its center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthBins {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for DepthBins {
    fn default() -> Self {
        DepthBins {
            count: 16,
            min: 1.0,
            max: 25.6,
        }
    }
}

impl DepthBins {
    pub fn new(count: usize, min: f64, max: f64) -> Result<Self> {
        let b = DepthBins { count, min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.min > 0.0) || !(self.max > self.min) || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "depth bins need count >= 2 and 0 < min < max (got {}, {}, {})",
                self.count, self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.count).map(|i| self.min + i as f64 * self.width()).collect()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.width()
    }
}

/// Nearest radar depth per image pixel as a `[1, H, W]` map; empty pixels
/// are zero. Points behind the camera or outside the image are skipped.
pub fn rasterize_radar_depth(points: &[RadarPoint], cam: &CameraModel) -> Tensor {
    let (h, w) = (cam.height, cam.width);
    let mut depth = Tensor::zeros(&[1, h, w]);
    let d = depth.data_mut();
    for p in points {
        let Some((u, v, z)) = cam.project(p.xyz()) else {
            continue;
        };
        let (col, row) = (u.round(), v.round());
        if !(col >= 0.0 && row >= 0.0 && (col as usize) < w && (row as usize) < h) {
            continue;
        }
        let cell = &mut d[row as usize * w + col as usize];
        if *cell == 0.0 || z < *cell {
            *cell = z;
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_camera_looks_forward() {
        let cam = CameraModel::toy();
        cam.validate().unwrap();
        let (u, v, d) = cam.project([10.0, 0.0, 0.0]).unwrap();
        assert_eq!((u, v, d), (cam.cx, cam.cy, 10.0));
        // Left in BEV is left in the image.
        assert!(cam.project([10.0, 1.0, 0.0]).unwrap().0 < cam.cx);
        assert!(cam.project([-1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn unproject_inverts_project() {
        let cam = CameraModel::toy();
        let p = [7.3, -1.2, 0.4];
        let (u, v, d) = cam.project(p).unwrap();
        let q = cam.unproject(u, v, d);
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let cam = CameraModel::toy();
        let mut buf = Vec::new();
        cam.write_json(&mut buf).unwrap();
        assert_eq!(CameraModel::read_json(buf.as_slice()).unwrap(), cam);
    }

    #[test]
    fn nearest_depth_wins() {
        let mut cam = CameraModel::toy();
        cam.cx = 16.0;
        cam.cy = 4.0;
        let pts = [RadarPoint::new(9.0, 0.0, 0.0, 0.0), RadarPoint::new(5.0, 0.0, 0.0, 0.0)];
        let d = rasterize_radar_depth(&pts, &cam);
        assert_eq!(d.data()[4 * 32 + 16], 5.0);
        assert_eq!(d.data().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn bins() {
        let b = DepthBins::default();
        assert_eq!(b.edges().len(), 17);
        assert!((b.center(0) - 1.76875).abs() < 1e-12);
        assert!(DepthBins::new(1, 1.0, 2.0).is_err());
    }
}
