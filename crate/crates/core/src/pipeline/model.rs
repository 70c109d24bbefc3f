//! The end-to-end toy detector: radar encoder, camera lift, fuser and
//! occupancy head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::Box3D;
use crate::fuser::{
    conv_fuser_backward, conv_fuser_forward, fp_ddca_backward, fp_ddca_forward_cached, ConvFuserParams, FeatureMap,
    FpDdcaCache, FpDdcaParams, Modality,
};
use crate::geomkit::{filter_pcr, stack_frames, VOXEL_FEATURES};
use crate::numkit::{bce_with_logits_mean, sigmoid, Conv2d, ParamSet, Tensor};
use crate::synthlab::{occupancy_targets, radar_range, radar_to_bev, Scene};
use crate::viewtrans::{
    lss_backward, lss_forward, rasterize_radar_depth, CameraModel, LssOutput, LssParams, SplatPlan,
};

use super::config::{FuserKind, PipelineConfig};

/// Fuser weights; single-modality models carry none.
#[derive(Clone, Debug, PartialEq)]
pub enum FuserParams {
    FpDdca(FpDdcaParams),
    Conv(ConvFuserParams),
    None,
}

impl ParamSet for FuserParams {
    fn tensors(&self) -> Vec<&Tensor> {
        match self {
            FuserParams::FpDdca(p) => p.tensors(),
            FuserParams::Conv(p) => p.tensors(),
            FuserParams::None => Vec::new(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            FuserParams::FpDdca(p) => p.tensors_mut(),
            FuserParams::Conv(p) => p.tensors_mut(),
            FuserParams::None => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// 1×1 convolution from the flattened voxel features to `C` channels.
    pub radar_encoder: Conv2d,
    pub lss: LssParams,
    pub fuser: FuserParams,
    /// 1×1 convolution to one logit per class.
    pub head: Conv2d,
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.radar_encoder.tensors();
        v.extend(self.lss.tensors());
        v.extend(self.fuser.tensors());
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.radar_encoder.tensors_mut();
        v.extend(self.lss.tensors_mut());
        v.extend(self.fuser.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

/// One scene turned into network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seed: u64,
    /// `[slabs·5, rows, cols]` scaled voxel features.
    pub radar: Tensor,
    /// `[C, H, W]` image features.
    pub image: Tensor,
    /// `[1, H, W]` projected radar depth, 0 where no return lands.
    pub radar_depth: Tensor,
    /// `[3, rows, cols]` occupancy targets.
    pub targets: Tensor,
    pub boxes: Vec<Box3D>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub radar_map: FeatureMap,
    pub lift: LssOutput,
    pub camera_map: FeatureMap,
    pub fused: FeatureMap,
    pub logits: Tensor,
    fp_cache: Option<FpDdcaCache>,
}

/// Loss and gradients of one sample.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    pub grads: ModelParams,
    /// Gradient norm at the fuser's radar input.
    pub radar_grad_norm: f64,
    /// Gradient norm at the fuser's camera input.
    pub camera_grad_norm: f64,
}

/// Fixed geometry and configuration shared by every forward pass.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub camera: CameraModel,
    pub plan: SplatPlan,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let camera = CameraModel::toy();
        let plan = SplatPlan::new(&camera, &config.model.depth_bins, config.scene.grid)?;
        Ok(Pipeline { config, camera, plan })
    }

    pub fn radar_channels(&self) -> usize {
        self.config.radar.channels(&self.config.scene.grid)
    }

    /// Fresh weights drawn from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        let m = &self.config.model;
        let grid = &self.config.scene.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radar_encoder = Conv2d::init(self.radar_channels(), m.channels, 1, &mut rng);
        let lss = LssParams::init(m.lss, m.channels, m.depth_bins.count, &mut rng)?;
        let fuser = match m.fuser {
            FuserKind::FpDdca => {
                FuserParams::FpDdca(FpDdcaParams::init(m.pyramid(), (grid.rows, grid.cols), &mut rng)?)
            }
            FuserKind::Conv => FuserParams::Conv(ConvFuserParams::init(m.channels, &mut rng)),
            FuserKind::RadarOnly | FuserKind::CameraOnly => FuserParams::None,
        };
        let head = Conv2d::init(m.channels, 3, 1, &mut rng);
        Ok(ModelParams {
            radar_encoder,
            lss,
            fuser,
            head,
        })
    }

    /// Per-feature divisors that bring pooled voxel features to order one.
    fn radar_scale(&self) -> [f64; VOXEL_FEATURES] {
        let g = &self.config.scene.grid;
        let r = &self.config.radar;
        let half = |a: f64, b: f64| a.abs().max(b.abs()).max(1e-9);
        [
            half(g.x_min, g.x_max()),
            half(g.y_min, g.y_max()),
            half(r.z_min, r.z_max),
            5.0,
            4.0,
        ]
    }

    pub fn prepare(&self, scene: &Scene) -> Result<Sample> {
        let cfg = &self.config;
        let grid = &cfg.scene.grid;
        if scene.camera != self.camera {
            return Err(Error::Config("scene camera does not match the pipeline camera".into()));
        }
        let expected = [cfg.scene.feature_channels, self.camera.height, self.camera.width];
        if scene.camera_features.shape() != expected {
            return Err(Error::Config(format!(
                "scene camera features {:?} do not match the configured {:?}",
                scene.camera_features.shape(),
                expected
            )));
        }
        if scene.frames.len() < cfg.model.frames {
            return Err(Error::Config(format!(
                "scene {} has {} sweeps, {} requested",
                scene.seed,
                scene.frames.len(),
                cfg.model.frames
            )));
        }
        let range = radar_range(grid, &cfg.radar);
        let points = filter_pcr(&stack_frames(&scene.frames, cfg.model.frames)?, &range);
        let mut radar = radar_to_bev(&points, grid, &cfg.radar.voxel(grid), &range)?.tensor;
        let scale = self.radar_scale();
        let cells = grid.cells();
        for (i, chunk) in radar.data_mut().chunks_mut(cells).enumerate() {
            let s = scale[i % VOXEL_FEATURES];
            chunk.iter_mut().for_each(|v| *v /= s);
        }
        if let Some(b) = scene.boxes.iter().find(|b| grid.cell_of(b.x, b.y).is_none()) {
            return Err(Error::Config(format!(
                "box at ({}, {}) lies outside the BEV grid",
                b.x, b.y
            )));
        }
        Ok(Sample {
            seed: scene.seed,
            radar,
            image: scene.camera_features.clone(),
            radar_depth: rasterize_radar_depth(&points, &self.camera),
            targets: occupancy_targets(&scene.boxes, grid),
            boxes: scene.boxes.clone(),
        })
    }

    pub fn forward(&self, params: &ModelParams, sample: &Sample) -> Result<Trace> {
        let res = self.config.scene.grid.resolution;
        let radar_map = FeatureMap::new(params.radar_encoder.forward(&sample.radar)?, Modality::Radar, res)?;
        let lift = lss_forward(&params.lss, &sample.image, Some(&sample.radar_depth))?;
        let camera_map = FeatureMap::new(self.plan.splat(&lift.frustum)?, Modality::Camera, res)?;
        let mut fp_cache = None;
        let fused = match (&params.fuser, self.config.model.fuser) {
            (FuserParams::FpDdca(p), FuserKind::FpDdca) => {
                let (out, cache) = fp_ddca_forward_cached(p, &radar_map, &camera_map, self.config.model.order)?;
                fp_cache = Some(cache);
                out
            }
            (FuserParams::Conv(p), FuserKind::Conv) => conv_fuser_forward(p, &radar_map, &camera_map)?,
            (FuserParams::None, FuserKind::RadarOnly) => radar_map.clone(),
            (FuserParams::None, FuserKind::CameraOnly) => camera_map.clone(),
            _ => return Err(Error::Config("parameters do not match the configured fuser".into())),
        };
        let logits = params.head.forward(&fused.tensor)?;
        Ok(Trace {
            radar_map,
            lift,
            camera_map,
            fused,
            logits,
            fp_cache,
        })
    }

    pub fn loss(&self, params: &ModelParams, sample: &Sample) -> Result<f64> {
        let t = self.forward(params, sample)?;
        Ok(bce_with_logits_mean(&t.logits, &sample.targets)?.0)
    }

    /// Per-class occupancy probabilities `[3, rows, cols]`.
    pub fn predict(&self, params: &ModelParams, sample: &Sample) -> Result<Tensor> {
        Ok(self.forward(params, sample)?.logits.map(sigmoid))
    }

    pub fn step(&self, params: &ModelParams, sample: &Sample) -> Result<StepResult> {
        let t = self.forward(params, sample)?;
        let (loss, dlogits) = bce_with_logits_mean(&t.logits, &sample.targets)?;
        let mut grads = params.zeroed();
        let (dfused, dhead) = params.head.backward(&t.fused.tensor, &dlogits)?;
        grads.head = dhead;
        let (dradar, dcamera) = match &params.fuser {
            FuserParams::FpDdca(p) => {
                let cache = t.fp_cache.as_ref().expect("cached by forward");
                let (dr, dc, g) = fp_ddca_backward(p, cache, &dfused)?;
                grads.fuser = FuserParams::FpDdca(g);
                (dr, dc)
            }
            FuserParams::Conv(p) => {
                let (dr, dc, g) = conv_fuser_backward(p, &t.radar_map, &t.camera_map, &dfused)?;
                grads.fuser = FuserParams::Conv(g);
                (dr, dc)
            }
            FuserParams::None if self.config.model.fuser == FuserKind::RadarOnly => {
                (dfused, t.camera_map.tensor.zeros_like())
            }
            FuserParams::None => (t.radar_map.tensor.zeros_like(), dfused),
        };
        let (_, denc) = params.radar_encoder.backward(&sample.radar, &dradar)?;
        grads.radar_encoder = denc;
        let dfrustum = self.plan.backward(&dcamera)?;
        let lg = lss_backward(
            &params.lss,
            &sample.image,
            Some(&sample.radar_depth),
            &t.lift,
            &dfrustum,
        )?;
        grads.lss = lg.params;
        Ok(StepResult {
            loss,
            grads,
            radar_grad_norm: dradar.norm(),
            camera_grad_norm: dcamera.norm(),
        })
    }
}
