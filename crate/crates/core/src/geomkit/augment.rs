use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evalkit::Box3D;

use super::{RadarPoint, RigidTransform};

/// Ranges for random global augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Yaw drawn from `[−max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub scale_range: [f64; 2],
    /// Probability of mirroring across the x-axis (y ↦ −y).
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation: PI / 8.0,
            scale_range: [0.95, 1.05],
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Parameters under which augmentation does nothing.
    pub fn identity() -> Self {
        AugmentConfig {
            max_rotation: 0.0,
            scale_range: [1.0, 1.0],
            flip_probability: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidTransform {
        let yaw = if self.max_rotation > 0.0 {
            rng.random_range(-self.max_rotation..=self.max_rotation)
        } else {
            0.0
        };
        let [lo, hi] = self.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let flip = rng.random_bool(self.flip_probability.clamp(0.0, 1.0));
        RigidTransform {
            flip_y: flip,
            scale,
            ..RigidTransform::from_yaw(yaw)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub points: Vec<RadarPoint>,
    pub boxes: Vec<Box3D>,
    /// The transform that produced `points` and `boxes` from the inputs.
    pub recorded: RigidTransform,
}

/// Apply one transform to a point cloud and its boxes.
pub fn augment_with(points: &[RadarPoint], boxes: &[Box3D], t: &RigidTransform) -> Augmented {
    let points = points
        .iter()
        .map(|p| {
            let [x, y, z] = t.apply_point(p.xyz());
            RadarPoint::new(x, y, z, p.v_r)
        })
        .collect();
    let boxes = boxes.iter().map(|b| b.transformed(t)).collect();
    Augmented {
        points,
        boxes,
        recorded: *t,
    }
}

/// Random rotation, flip and rescale drawn from `seed`. The returned record
/// replays the exact same outputs through [`augment_with`].
pub fn augment(points: &[RadarPoint], boxes: &[Box3D], seed: u64, config: &AugmentConfig) -> Augmented {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = config.sample(&mut rng);
    augment_with(points, boxes, &t)
}
