//! Radar-camera fusion in a shared bird's-eye-view plane.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense `f64` tensors with hand-written backward passes, a
//!   finite-difference gradient checker and AdamW.
//! - [`geomkit`]: 4D radar point clouds, range filtering, voxelization,
//!   multi-frame stacking and recorded augmentation.
//! - [`fuser`]: deformable cross attention, the two-pass block built on it
//!   and the feature-pyramid fuser.
//! - [`viewtrans`]: lift-splat view transforms (vanilla, depth-supervised,
//!   depth/context split) and BEV splatting.
//! - [`evalkit`]: oriented-box IoU and per-class average precision.
//! - [`synthlab`]: deterministic synthetic scenes and the toy occupancy task.
//! - [`pipeline`]: end-to-end model, training, evaluation, ablations and
//!   rendering used by the `zfuse` binary.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (the
//! default). Reductions always happen in a fixed chunk order, so results are
//! bit-identical with and without the feature.

pub mod error;
pub mod evalkit;
pub mod fuser;
pub mod geomkit;
pub mod numkit;
pub mod par;
pub mod pipeline;
pub mod synthlab;
pub mod viewtrans;

pub use error::{Error, Result};
