use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// One radar return: position in meters and ego-motion-compensated radial
/// velocity in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v_r: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, v_r: f64) -> Self {
        RadarPoint { x, y, z, v_r }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.v_r.is_finite()
    }
}

/// Axis-aligned box of half-open intervals `[min, max)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RangeSpec {
    /// Point-cloud range of the radar branch: x ∈ (0, 51.2), y ∈ (−25.6, 25.6),
    /// z ∈ (−3, 2).
    pub const FULL_SCALE_PCR: RangeSpec = RangeSpec {
        min: [0.0, -25.6, -3.0],
        max: [51.2, 25.6, 2.0],
    };

    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let r = RangeSpec { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) {
                return Err(Error::Config(format!(
                    "range axis {a}: min {} must be below max {}",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] < self.max[a])
    }
}

/// Keep the points inside `spec`, preserving order.
pub fn filter_pcr(points: &[RadarPoint], spec: &RangeSpec) -> Vec<RadarPoint> {
    points.iter().copied().filter(|p| spec.contains(p.xyz())).collect()
}

/// One `x,y,z,v_r` line per point, no header.
pub fn write_points_csv<W: Write>(w: W, points: &[RadarPoint]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for p in points {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_points_csv<R: Read>(r: R) -> Result<Vec<RadarPoint>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        let p: RadarPoint = rec?;
        if !p.is_finite() {
            return Err(Error::Format(format!("non-finite point {p:?}")));
        }
        out.push(p);
    }
    Ok(out)
}

/// `[N, 4]` tensor of `x, y, z, v_r` rows.
pub fn points_to_tensor(points: &[RadarPoint]) -> Tensor {
    let data = points.iter().flat_map(|p| [p.x, p.y, p.z, p.v_r]).collect();
    Tensor::new(vec![points.len(), 4], data).expect("4 values per point")
}

pub fn points_from_tensor(t: &Tensor) -> Result<Vec<RadarPoint>> {
    if t.rank() != 2 || t.dim(1) != 4 {
        return Err(Error::shape(
            "points_from_tensor",
            format!("expected [N, 4], got {:?}", t.shape()),
        ));
    }
    Ok(t.data()
        .chunks(4)
        .map(|c| RadarPoint::new(c[0], c[1], c[2], c[3]))
        .collect())
}
