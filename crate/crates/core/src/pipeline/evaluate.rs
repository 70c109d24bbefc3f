//! Decode occupancy predictions into boxes and score them.

use crate::error::{Error, Result};
use crate::evalkit::{evaluate_frames, Box3D, EvalReport, FrameBoxes};
use crate::par;
use crate::synthlab::decode_boxes;

use super::model::{ModelParams, Pipeline, Sample};

/// Detections of one sample.
pub fn detect(pipe: &Pipeline, params: &ModelParams, sample: &Sample) -> Result<Vec<Box3D>> {
    let cfg = &pipe.config;
    let probs = pipe.predict(params, sample)?;
    Ok(decode_boxes(
        &probs,
        &cfg.scene.grid,
        cfg.eval.threshold,
        &cfg.scene.sizes,
        cfg.scene.ground_z,
    ))
}

/// Run the model on every sample and compute entire-area and RoI AP.
pub fn evaluate_model(pipe: &Pipeline, params: &ModelParams, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let frames = par::map_items(samples, |s| -> Result<FrameBoxes> {
        Ok(FrameBoxes {
            detections: detect(pipe, params, s)?,
            ground_truth: s.boxes.clone(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    evaluate_frames(&frames, &pipe.config.eval.metrics)
}

/// Score the ground truth against itself, each box with confidence one.
/// Checks the evaluation plumbing independently of the model.
pub fn evaluate_bypass(pipe: &Pipeline, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let frames: Vec<FrameBoxes> = samples
        .iter()
        .map(|s| FrameBoxes {
            detections: s.boxes.iter().map(|b| b.with_score(1.0)).collect(),
            ground_truth: s.boxes.clone(),
        })
        .collect();
    evaluate_frames(&frames, &pipe.config.eval.metrics)
}
