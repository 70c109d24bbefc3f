//! One-axis ablations: train and evaluate each setting on the same scenes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::fuser::InteractionOrder;
use crate::synthlab::Scene;
use crate::viewtrans::LssVariant;

use super::config::{fingerprint_json, FuserKind, PipelineConfig};
use super::evaluate::evaluate_model;
use super::model::Pipeline;
use super::train::{generate_scenes, prepare_all, train};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    Fuser,
    FpLayers,
    Lss,
    Order,
    Frames,
    /// Fused input against each sensor alone.
    Modality,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Fuser,
        AblationAxis::FpLayers,
        AblationAxis::Lss,
        AblationAxis::Order,
        AblationAxis::Frames,
        AblationAxis::Modality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Fuser => "fuser",
            AblationAxis::FpLayers => "fp-layers",
            AblationAxis::Lss => "lss",
            AblationAxis::Order => "order",
            AblationAxis::Frames => "frames",
            AblationAxis::Modality => "modality",
        }
    }

    /// The configurations compared along this axis, labeled.
    pub fn settings(self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        let with = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Fuser => [("ddca", FuserKind::FpDdca), ("convolution", FuserKind::Conv)]
                .into_iter()
                .map(|(n, k)| (n.to_string(), with(&|c| c.model.fuser = k)))
                .collect(),
            AblationAxis::FpLayers => (1..=3)
                .map(|n| (n.to_string(), with(&|c| c.model.fp_layers = n)))
                .collect(),
            AblationAxis::Lss => LssVariant::ALL
                .into_iter()
                .map(|v| (v.name().to_string(), with(&|c| c.model.lss = v)))
                .collect(),
            AblationAxis::Order => [InteractionOrder::RadarCamera, InteractionOrder::CameraRadar]
                .into_iter()
                .map(|o| (o.name().to_string(), with(&|c| c.model.order = o)))
                .collect(),
            AblationAxis::Frames => [1, 3, 5]
                .into_iter()
                .map(|n| (n.to_string(), with(&|c| c.model.frames = n)))
                .collect(),
            AblationAxis::Modality => {
                let fused = match base.model.fuser {
                    k @ (FuserKind::FpDdca | FuserKind::Conv) => k,
                    _ => FuserKind::FpDdca,
                };
                [
                    ("radar+camera", fused),
                    ("radar", FuserKind::RadarOnly),
                    ("camera", FuserKind::CameraOnly),
                ]
                .into_iter()
                .map(|(n, k)| (n.to_string(), with(&|c| c.model.fuser = k)))
                .collect()
            }
        }
    }

    /// `config` with this axis reset to a fixed placeholder, so that
    /// settings differing only along the axis share a fingerprint.
    pub fn masked(self, config: &PipelineConfig) -> PipelineConfig {
        let mut c = config.clone();
        match self {
            AblationAxis::Fuser | AblationAxis::Modality => c.model.fuser = FuserKind::FpDdca,
            AblationAxis::FpLayers => c.model.fp_layers = 1,
            AblationAxis::Lss => c.model.lss = LssVariant::DepthContext,
            AblationAxis::Order => c.model.order = InteractionOrder::RadarCamera,
            AblationAxis::Frames => c.model.frames = 1,
        }
        c
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let known: Vec<_> = AblationAxis::ALL.iter().map(|a| a.name()).collect();
            Error::Argument(format!(
                "unknown ablation axis {s:?}; expected one of {}",
                known.join(", ")
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub config_fingerprint: String,
    /// Fingerprint with the ablated field masked; equal across rows.
    pub fixed_fingerprint: String,
    pub scene_fingerprint: String,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub entire_area_map: Option<f64>,
    pub roi_map: Option<f64>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: u32,
    pub axis: AblationAxis,
    pub base_fingerprint: String,
    pub rows: Vec<AblationRow>,
}

/// Fingerprint of the scene sets a config trains and tests on.
pub fn scene_fingerprint(config: &PipelineConfig) -> String {
    fingerprint_json(&serde_json::json!({
        "scene": config.scene,
        "radar": config.radar,
        "train": config.train_seeds(),
        "test": config.test_seeds(),
    }))
}

pub fn ablate(base: &PipelineConfig, axis: AblationAxis) -> Result<AblationReport> {
    base.validate()?;
    let train_scenes: Vec<Scene> = generate_scenes(&base.scene, &base.train_seeds())?;
    let test_scenes: Vec<Scene> = generate_scenes(&base.scene, &base.test_seeds())?;
    let mut rows = Vec::new();
    for (setting, cfg) in axis.settings(base) {
        log::info!("ablation {axis}: training {setting}");
        let pipe = Pipeline::new(cfg)?;
        let train_samples = prepare_all(&pipe, &train_scenes)?;
        let test_samples = prepare_all(&pipe, &test_scenes)?;
        let mut params = pipe.init_params(pipe.config.seed)?;
        let tr = train(&pipe, &mut params, &train_samples)?;
        let report = evaluate_model(&pipe, &params, &test_samples)?;
        rows.push(AblationRow {
            config_fingerprint: pipe.config.fingerprint(),
            fixed_fingerprint: axis.masked(&pipe.config).fingerprint(),
            scene_fingerprint: scene_fingerprint(&pipe.config),
            seed: pipe.config.seed,
            initial_loss: tr.initial_loss,
            final_loss: tr.final_loss,
            entire_area_map: report.entire_area.map,
            roi_map: report.roi.map,
            report,
            setting,
        });
    }
    Ok(AblationReport {
        schema: 1,
        axis,
        base_fingerprint: axis.masked(base).fingerprint(),
        rows,
    })
}
