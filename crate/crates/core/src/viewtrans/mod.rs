//! Camera-to-BEV view transforms.
//!
//! Image features are lifted into a frustum of depth bins, weighted by a
//! per-pixel depth distribution, and sum-pooled onto the BEV grid. Three
//! ways of producing the depth distribution and context are provided; see
//! [`LssVariant`].

mod camera;
mod grid;
mod lss;
mod splat;

pub use camera::{rasterize_radar_depth, CameraModel, DepthBins};
pub use grid::BevGrid;
pub use lss::{
    depth_context_lss, depth_supervised_lss, lss_backward, lss_forward, vanilla_lss, LssGrads, LssOutput, LssParams,
    LssVariant,
};
pub use splat::{frustum_points, splat_to_bev, SplatPlan};
