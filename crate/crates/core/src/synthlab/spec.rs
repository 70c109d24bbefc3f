use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::ObjectClass;
use crate::viewtrans::BevGrid;

/// One value per evaluated class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub car: usize,
    pub pedestrian: usize,
    pub cyclist: usize,
}

impl ClassCounts {
    pub fn get(&self, class: ObjectClass) -> usize {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }

    pub fn total(&self) -> usize {
        self.car + self.pedestrian + self.cyclist
    }
}

/// Mean `[l, w, h]` extents in meters per class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSizes {
    pub car: [f64; 3],
    pub pedestrian: [f64; 3],
    pub cyclist: [f64; 3],
}

impl Default for ClassSizes {
    fn default() -> Self {
        ClassSizes {
            car: [4.0, 1.8, 1.5],
            pedestrian: [0.8, 0.8, 1.7],
            cyclist: [1.8, 0.8, 1.6],
        }
    }
}

impl ClassSizes {
    pub fn get(&self, class: ObjectClass) -> [f64; 3] {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }
}

/// Everything that determines a synthetic scene. The camera is always
/// [`crate::viewtrans::CameraModel::toy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub counts: ClassCounts,
    pub sizes: ClassSizes,
    /// Unlabeled static obstacles (poles, walls).
    pub occluders: usize,
    /// Gaussian position noise of radar returns, meters.
    pub noise_sigma: f64,
    /// Probability that a return on an occluded surface is kept anyway.
    pub p_xray: f64,
    /// Probability that any return is discarded.
    pub dropout: f64,
    /// Uniform false returns per frame.
    pub clutter: usize,
    /// Returns sampled per object and frame, before occlusion and dropout.
    pub returns: ClassCounts,
    pub occluder_returns: usize,
    /// Sweeps per scene, oldest first; the last one is labeled.
    pub frames: usize,
    pub frame_dt: f64,
    pub ego_speed: f64,
    /// Height of the ground plane in sensor coordinates.
    pub ground_z: f64,
    pub grid: BevGrid,
    /// Channels of the stub camera encoder output.
    pub feature_channels: usize,
    /// Seed of the stub encoder weights, shared by all scenes.
    pub encoder_seed: u64,
    /// Relative noise on the camera's inverse-depth cue.
    pub depth_cue_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            counts: ClassCounts {
                car: 2,
                pedestrian: 2,
                cyclist: 1,
            },
            sizes: ClassSizes::default(),
            occluders: 1,
            noise_sigma: 0.1,
            p_xray: 0.1,
            dropout: 0.0,
            clutter: 4,
            returns: ClassCounts {
                car: 10,
                pedestrian: 3,
                cyclist: 5,
            },
            occluder_returns: 6,
            frames: 5,
            frame_dt: 0.077,
            ego_speed: 4.0,
            ground_z: -1.0,
            grid: BevGrid::default(),
            feature_channels: 8,
            encoder_seed: 17,
            depth_cue_noise: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_xray", self.p_xray), ("dropout", self.dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.depth_cue_noise >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("a scene needs at least one frame".into()));
        }
        if self.feature_channels == 0 {
            return Err(Error::Config("feature_channels must be positive".into()));
        }
        if !(self.frame_dt >= 0.0) || !self.ego_speed.is_finite() || !self.ground_z.is_finite() {
            return Err(Error::Config("frame_dt, ego_speed and ground_z must be finite".into()));
        }
        for class in ObjectClass::ALL {
            if self.sizes.get(class).iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config(format!("{class} size prior must be positive")));
            }
        }
        self.grid.validate()
    }
}
