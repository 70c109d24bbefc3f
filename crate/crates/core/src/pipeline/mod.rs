//! End-to-end toy pipeline: configuration, model, training, evaluation,
//! ablations, rendering and the gradient-check registry.

mod ablate;
mod checkpoint;
mod config;
mod evaluate;
pub mod gradsuite;
mod model;
mod render;
mod train;

pub use ablate::{ablate, scene_fingerprint, AblationAxis, AblationReport, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{fingerprint_json, EvalSettings, FuserKind, ModelConfig, PipelineConfig, TrainConfig};
pub use evaluate::{detect, evaluate_bypass, evaluate_model};
pub use model::{FuserParams, ModelParams, Pipeline, Sample, StepResult, Trace};
pub use render::{save_pgm, to_gray, write_overlay_ppm, write_pgm, GrayImage};
pub use train::{generate_scenes, load_samples, mean_loss, prepare_all, train, EpochLog, TrainReport};
