//! Mini-batch AdamW training on synthetic scenes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{AdamWState, ParamSet};
use crate::par;
use crate::synthlab::{generate_scene, Scene, SceneSpec};

use super::model::{ModelParams, Pipeline, Sample};

/// Generate the scenes for `seeds` in parallel, in seed order.
pub fn generate_scenes(spec: &SceneSpec, seeds: &[u64]) -> Result<Vec<Scene>> {
    par::map_items(seeds, |&seed| generate_scene(&SceneSpec { seed, ..spec.clone() }))
        .into_iter()
        .collect()
}

pub fn prepare_all(pipe: &Pipeline, scenes: &[Scene]) -> Result<Vec<Sample>> {
    par::map_items(scenes, |s| pipe.prepare(s)).into_iter().collect()
}

/// Generate and prepare the scenes for `seeds`.
pub fn load_samples(pipe: &Pipeline, seeds: &[u64]) -> Result<Vec<Sample>> {
    prepare_all(pipe, &generate_scenes(&pipe.config.scene, seeds)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean sample loss over the epoch, taken before each update.
    pub loss: f64,
    /// Mean gradient norm at the fuser's radar input.
    pub radar_grad_norm: f64,
    /// Mean gradient norm at the fuser's camera input.
    pub camera_grad_norm: f64,
    pub param_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: u32,
    pub config_fingerprint: String,
    pub scene_seeds: Vec<u64>,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean loss over the training set after the last update.
    pub final_loss: f64,
    pub epochs: Vec<EpochLog>,
}

/// Mean loss over `samples`, summed in sample order.
pub fn mean_loss(pipe: &Pipeline, params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let losses = par::map_items(samples, |s| pipe.loss(params, s));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / samples.len() as f64)
}

fn diverged(epoch: usize, loss: f64, params: &ModelParams) -> Error {
    Error::Diverged {
        epoch,
        loss,
        param_norm: params.sq_norm().sqrt(),
    }
}

/// Train `params` in place. Batches are formed from a per-epoch shuffle
/// seeded by the config seed; per-sample gradients are computed in parallel
/// and summed in batch order.
pub fn train(pipe: &Pipeline, params: &mut ModelParams, samples: &[Sample]) -> Result<TrainReport> {
    let cfg = &pipe.config;
    let seeds = samples.iter().map(|s| s.seed).collect();
    let initial_loss = mean_loss(pipe, params, samples)?;
    if !initial_loss.is_finite() {
        return Err(diverged(0, initial_loss, params));
    }
    let mut opt = AdamWState::new(cfg.train.optimizer, &params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut rn, mut cn) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.train.batch_size) {
            let results = par::map_items(batch, |&i| pipe.step(params, &samples[i]));
            let mut grads = params.zeroed();
            for r in results {
                let r = match r {
                    Ok(r) => r,
                    Err(Error::NonFinite { .. }) => return Err(diverged(epoch, f64::NAN, params)),
                    Err(e) => return Err(e),
                };
                if !r.loss.is_finite() {
                    return Err(diverged(epoch, r.loss, params));
                }
                loss_sum += r.loss;
                rn += r.radar_grad_norm;
                cn += r.camera_grad_norm;
                grads.accumulate(&r.grads);
            }
            grads.scale_all(1.0 / batch.len() as f64);
            let g = grads.tensors();
            opt.step(&mut params.tensors_mut(), &g)?;
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            loss: loss_sum / n,
            radar_grad_norm: rn / n,
            camera_grad_norm: cn / n,
            param_norm: params.sq_norm().sqrt(),
        };
        log::info!(
            "epoch {epoch}: loss {:.6}, grad norms radar {:.3e} camera {:.3e}",
            log.loss,
            log.radar_grad_norm,
            log.camera_grad_norm
        );
        if !log.param_norm.is_finite() {
            return Err(diverged(epoch, log.loss, params));
        }
        epochs.push(log);
    }
    let final_loss = if epochs.is_empty() {
        initial_loss
    } else {
        mean_loss(pipe, params, samples)?
    };
    if !final_loss.is_finite() {
        return Err(diverged(cfg.train.epochs, final_loss, params));
    }
    Ok(TrainReport {
        schema: 1,
        config_fingerprint: cfg.fingerprint(),
        scene_seeds: seeds,
        initial_loss,
        final_loss,
        epochs,
    })
}
