//! Run configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::fuser::{DcaConfig, FpDdcaConfig, InteractionOrder, ScaleMerge, ScaleSchedule};
use crate::numkit::AdamWConfig;
use crate::synthlab::{RadarBevSpec, SceneSpec};
use crate::viewtrans::{DepthBins, LssVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuserKind {
    FpDdca,
    Conv,
    /// No fusion: the head sees the radar branch alone.
    #[serde(alias = "none-radar-only")]
    RadarOnly,
    #[serde(alias = "none-camera-only")]
    CameraOnly,
}

impl FuserKind {
    pub fn name(self) -> &'static str {
        match self {
            FuserKind::FpDdca => "fp-ddca",
            FuserKind::Conv => "conv",
            FuserKind::RadarOnly => "radar-only",
            FuserKind::CameraOnly => "camera-only",
        }
    }

    pub fn uses_radar(self) -> bool {
        self != FuserKind::CameraOnly
    }

    pub fn uses_camera(self) -> bool {
        self != FuserKind::RadarOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fuser: FuserKind,
    /// Pyramid depth of the attention fuser.
    pub fp_layers: usize,
    /// Two-pass blocks per pyramid level.
    pub blocks: usize,
    pub order: InteractionOrder,
    pub lss: LssVariant,
    /// Radar sweeps stacked into one cloud.
    pub frames: usize,
    pub channels: usize,
    pub heads: usize,
    pub points: usize,
    pub schedule: ScaleSchedule,
    pub merge: ScaleMerge,
    pub depth_bins: DepthBins,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fuser: FuserKind::FpDdca,
            fp_layers: 3,
            blocks: 2,
            order: InteractionOrder::RadarCamera,
            lss: LssVariant::DepthContext,
            frames: 1,
            channels: 8,
            heads: 2,
            points: 4,
            schedule: ScaleSchedule::Dyadic,
            merge: ScaleMerge::Sum,
            depth_bins: DepthBins {
                count: 16,
                min: 0.8,
                max: 13.6,
            },
        }
    }
}

impl ModelConfig {
    pub fn attention(&self) -> DcaConfig {
        DcaConfig {
            channels: self.channels,
            heads: self.heads,
            points: self.points,
        }
    }

    pub fn pyramid(&self) -> FpDdcaConfig {
        FpDdcaConfig {
            attention: self.attention(),
            levels: self.fp_layers,
            blocks: self.blocks,
            schedule: self.schedule,
            merge: self.merge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scenes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scenes: 32,
            epochs: 50,
            batch_size: 4,
            optimizer: AdamWConfig {
                lr: 5e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub test_scenes: usize,
    /// Occupancy probability at which a cell counts as foreground.
    pub threshold: f64,
    pub metrics: EvalConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            test_scenes: 16,
            threshold: 0.5,
            metrics: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// Scene generator settings; the per-scene seed is derived from `seed`.
    pub scene: SceneSpec,
    pub radar: RadarBevSpec,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        self.scene.validate()?;
        let grid = &self.scene.grid;
        grid.validate()?;
        m.depth_bins.validate()?;
        m.attention().validate()?;
        if ![1, 3, 5].contains(&m.frames) {
            return Err(Error::Config(format!(
                "frame count must be 1, 3 or 5, got {}",
                m.frames
            )));
        }
        if m.frames > self.scene.frames {
            return Err(Error::Config(format!(
                "cannot stack {} frames from scenes with {}",
                m.frames, self.scene.frames
            )));
        }
        let pyramid = m.pyramid();
        pyramid.validate()?;
        pyramid
            .check_grid(grid.rows, grid.cols)
            .map_err(|e| Error::Config(e.to_string()))?;
        if m.channels != self.scene.feature_channels {
            return Err(Error::Config(format!(
                "the lift keeps the image channel count: model.channels ({}) must equal scene.feature_channels ({})",
                m.channels, self.scene.feature_channels
            )));
        }
        let r = &self.radar;
        if !(r.slab > 0.0 && r.z_max > r.z_min) {
            return Err(Error::Config(format!("invalid radar slab spec {r:?}")));
        }
        r.voxel(grid).validate(&crate::synthlab::radar_range(grid, r))?;
        let t = &self.train;
        t.optimizer.validate()?;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if t.epochs > 0 && t.scenes == 0 {
            return Err(Error::Config("training needs at least one scene".into()));
        }
        let e = &self.eval;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(Error::Config(format!(
                "eval.threshold must lie in (0, 1), got {}",
                e.threshold
            )));
        }
        e.metrics.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        fingerprint_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Seeds of the training scenes.
    pub fn train_seeds(&self) -> Vec<u64> {
        scene_seeds(self.seed, 0, self.train.scenes)
    }

    /// Seeds of the held-out scenes, disjoint from the training seeds.
    pub fn test_seeds(&self) -> Vec<u64> {
        scene_seeds(self.seed, 1, self.eval.test_scenes)
    }
}

fn scene_seeds(seed: u64, split: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| (seed << 24) | (split << 20) | i).collect()
}

pub fn fingerprint_json(v: &serde_json::Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
