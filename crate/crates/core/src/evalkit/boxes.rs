use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomkit::{normalize_angle, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(Error::Argument(format!("unknown class label {other:?}"))),
        }
    }
}

/// Oriented 3D box. `(x, y, z)` is the center, `l` runs along the heading
/// `theta` (yaw about the vertical axis), `w` across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Box3D {
    /// `dims` is `[w, l, h]`.
    pub fn new(class: ObjectClass, center: [f64; 3], dims: [f64; 3], theta: f64) -> Self {
        Box3D {
            class,
            x: center[0],
            y: center[1],
            z: center[2],
            w: dims[0],
            l: dims[1],
            h: dims[2],
            theta: normalize_angle(theta),
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.z, self.w, self.l, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.w > 0.0 && self.l > 0.0 && self.h > 0.0) {
            return Err(Error::Contract(format!("degenerate box {self:?}")));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Contract(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Counter-clockwise BEV corners.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(u, v)| [self.x + u * c - v * s, self.y + u * s + v * c])
    }

    /// Whether `(x, y)` lies in the footprint (boundary included).
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.z - self.h / 2.0
    }

    pub fn top(&self) -> f64 {
        self.z + self.h / 2.0
    }

    /// The box moved by `t`: center mapped as a point, heading as a
    /// direction, extents multiplied by the scale.
    pub fn transformed(&self, t: &RigidTransform) -> Box3D {
        let [x, y, z] = t.apply_point(self.center());
        Box3D {
            x,
            y,
            z,
            w: self.w * t.scale,
            l: self.l * t.scale,
            h: self.h * t.scale,
            theta: t.apply_yaw(self.theta),
            ..*self
        }
    }

    /// Total order over the geometric fields, used to break ties
    /// deterministically.
    pub(crate) fn geometry_cmp(&self, other: &Box3D) -> std::cmp::Ordering {
        let a = [self.x, self.y, self.z, self.w, self.l, self.h, self.theta];
        let b = [other.x, other.y, other.z, other.w, other.l, other.h, other.theta];
        a.iter()
            .zip(&b)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.class.cmp(&other.class))
    }
}

#[derive(Deserialize)]
struct RawBox {
    class: String,
    x: f64,
    y: f64,
    z: f64,
    w: f64,
    l: f64,
    h: f64,
    theta: f64,
    #[serde(default)]
    score: Option<f64>,
}

/// Read `{class, x, y, z, w, l, h, theta, score?}` JSON lines. Blank lines
/// are skipped; unknown classes are argument errors.
pub fn read_boxes_jsonl<R: BufRead>(r: R) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawBox = serde_json::from_str(&line)?;
        let b = Box3D {
            class: raw.class.parse()?,
            x: raw.x,
            y: raw.y,
            z: raw.z,
            w: raw.w,
            l: raw.l,
            h: raw.h,
            theta: raw.theta,
            score: raw.score,
        };
        b.validate()?;
        out.push(b);
    }
    Ok(out)
}

pub fn write_boxes_jsonl<W: Write>(mut w: W, boxes: &[Box3D]) -> Result<()> {
    for b in boxes {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
