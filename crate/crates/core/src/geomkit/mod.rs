//! 4D radar point-cloud geometry.

mod augment;
mod points;
mod stack;
mod transform;
mod voxel;

pub use augment::{augment, augment_with, AugmentConfig, Augmented};
pub use points::{
    filter_pcr, points_from_tensor, points_to_tensor, read_points_csv, write_points_csv, RadarPoint, RangeSpec,
};
pub use stack::{stack_frames, RadarFrame};
pub use transform::{normalize_angle, RigidTransform};
pub use voxel::{voxelize, Voxel, VoxelGrid, VoxelSpec, VOXEL_FEATURES};
