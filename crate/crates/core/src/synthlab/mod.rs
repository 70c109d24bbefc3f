//! Synthetic scenes and the toy occupancy task.
//!
//! A scene is a handful of labeled boxes and unlabeled occluders on flat
//! ground in front of a radar and a camera that share an origin. Radar
//! returns are sampled on surfaces facing the sensor, thinned by occlusion
//! (with an optional "X-ray" leak), jittered and given radial velocities.
//! The camera sees class silhouettes through a fixed random convolution
//! that stands in for an image backbone.

mod camera_sim;
mod io;
mod radar_bev;
mod scene;
mod spec;
mod task;

pub use camera_sim::{rasterize_silhouettes, Silhouette, StubEncoder, SILHOUETTE_CHANNELS};
pub use io::{load_scene_dir, save_scene_dir};
pub use radar_bev::{radar_range, radar_to_bev, RadarBevSpec};
pub use scene::{generate_scene, render_scene, sample_layout, Occluder, Scene, SceneLayout, SceneObject};
pub use spec::{ClassCounts, ClassSizes, SceneSpec};
pub use task::{decode_boxes, occupancy_targets, toy_task_loss, ToyLoss};
