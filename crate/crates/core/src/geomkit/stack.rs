use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RadarPoint, RigidTransform};

/// One radar sweep with its ego pose (world ← ego).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarFrame {
    pub points: Vec<RadarPoint>,
    pub pose: RigidTransform,
}

/// Express the last `k` frames in the coordinates of the newest one and
/// concatenate them, oldest first. `frames` is ordered oldest → current.
///
/// Attributes other than position pass through unchanged; `v_r` is not
/// re-projected.
pub fn stack_frames(frames: &[RadarFrame], k: usize) -> Result<Vec<RadarPoint>> {
    if k == 0 || k > frames.len() {
        return Err(Error::Argument(format!(
            "cannot stack {k} frames from {} available",
            frames.len()
        )));
    }
    let current = frames.last().expect("non-empty").pose.inverse();
    let mut out = Vec::with_capacity(frames[frames.len() - k..].iter().map(|f| f.points.len()).sum());
    for frame in &frames[frames.len() - k..] {
        let to_current = current.compose(&frame.pose);
        out.extend(frame.points.iter().map(|p| {
            let [x, y, z] = to_current.apply_point(p.xyz());
            RadarPoint::new(x, y, z, p.v_r)
        }));
    }
    Ok(out)
}
