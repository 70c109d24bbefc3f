use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle into `(−π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// `p ↦ scale · R · F · p + t`, where `F` negates x and/or y.
///
/// Poses and augmentation records share this type. Pure rigid motions have
/// no flips and unit scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub flip_x: bool,
    pub flip_y: bool,
    pub scale: f64,
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

/// `F · R · F` for diagonal `F`.
fn conjugate_by_flips(r: &[[f64; 3]; 3], fx: bool, fy: bool) -> [[f64; 3]; 3] {
    let s = [if fx { -1.0 } else { 1.0 }, if fy { -1.0 } else { 1.0 }, 1.0];
    let mut out = *r;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] *= s[i] * s[j];
        }
    }
    out
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: IDENTITY3,
            translation: [0.0; 3],
            flip_x: false,
            flip_y: false,
            scale: 1.0,
        }
    }

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        RigidTransform {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            ..Self::identity()
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        RigidTransform {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        RigidTransform {
            translation: t,
            ..Self::from_yaw(yaw)
        }
    }

    /// Build from a rotation-plus-translation 4×4 matrix.
    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<Self> {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            rotation[i].copy_from_slice(&m[i][..3]);
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Config(format!(
                "bottom row of a rigid transform must be [0, 0, 0, 1], got {:?}",
                m[3]
            )));
        }
        let t = RigidTransform {
            rotation,
            translation: [m[0][3], m[1][3], m[2][3]],
            ..Self::identity()
        };
        t.validate()?;
        Ok(t)
    }

    /// Rotation orthonormal within 1e-10 with determinant +1, scale positive.
    pub fn validate(&self) -> Result<()> {
        let rtr = matmul3(&transpose3(&self.rotation), &self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                if (rtr[i][j] - target).abs() > 1e-10 {
                    return Err(Error::Config("rotation is not orthonormal".into()));
                }
            }
        }
        let r = &self.rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("rotation determinant {det} is not +1")));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    /// `scale · R · F · v` (no translation).
    pub fn apply_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let f = [
            if self.flip_x { -v[0] } else { v[0] },
            if self.flip_y { -v[1] } else { v[1] },
            v[2],
        ];
        let r = &self.rotation;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.scale * (r[i][0] * f[0] + r[i][1] * f[1] + r[i][2] * f[2]);
        }
        out
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.apply_vector(p);
        [
            v[0] + self.translation[0],
            v[1] + self.translation[1],
            v[2] + self.translation[2],
        ]
    }

    /// Heading of the image of a direction at angle `yaw` in the xy-plane.
    pub fn apply_yaw(&self, yaw: f64) -> f64 {
        let (s, c) = yaw.sin_cos();
        let d = self.apply_vector([c, s, 0.0]);
        normalize_angle(d[1].atan2(d[0]))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let inner = conjugate_by_flips(&other.rotation, self.flip_x, self.flip_y);
        RigidTransform {
            rotation: matmul3(&self.rotation, &inner),
            translation: self.apply_point(other.translation),
            flip_x: self.flip_x ^ other.flip_x,
            flip_y: self.flip_y ^ other.flip_y,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = conjugate_by_flips(&transpose3(&self.rotation), self.flip_x, self.flip_y);
        let mut inv = RigidTransform {
            rotation,
            translation: [0.0; 3],
            flip_x: self.flip_x,
            flip_y: self.flip_y,
            scale: 1.0 / self.scale,
        };
        let t = inv.apply_vector(self.translation);
        inv.translation = [-t[0], -t[1], -t[2]];
        inv
    }

    /// Homogeneous 4×4 matrix of the full affine map.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            let col = self.apply_vector(e);
            for i in 0..3 {
                m[i][j] = col[i];
            }
        }
        for i in 0..3 {
            m[i][3] = self.translation[i];
        }
        m[3][3] = 1.0;
        m
    }
}
