use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomkit::{RangeSpec, RigidTransform};

use super::{class_curve, Box3D, ClassCurve, Interpolation, ObjectClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    EntireArea,
    Roi,
}

/// Open rectangle `x_min < x < x_max`, `y_min < y < y_max` (z unbounded).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corridor {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Corridor {
    /// Driving corridor: 0 < x < 25 m, −4 m < y < 4 m.
    pub const DRIVING: Corridor = Corridor {
        x: [0.0, 25.0],
        y: [-4.0, 4.0],
    };

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x[0] < x && x < self.x[1] && self.y[0] < y && y < self.y[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// IoU thresholds indexed by [`ObjectClass::index`].
    pub thresholds: [f64; 3],
    pub roi: Corridor,
    /// Annotated area; `None` keeps every box.
    pub entire_area: Option<RangeSpec>,
    /// Maps box centers into the frame the corridor is defined in.
    #[serde(default)]
    pub roi_transform: Option<RigidTransform>,
    pub iou_mode: IouMode,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: [0.5, 0.25, 0.25],
            roi: Corridor::DRIVING,
            entire_area: None,
            roi_transform: None,
            iou_mode: IouMode::Bev,
            interpolation: Interpolation::R40,
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self, class: ObjectClass) -> f64 {
        self.thresholds[class.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config(format!(
                "IoU thresholds must lie in (0, 1]: {:?}",
                self.thresholds
            )));
        }
        if let Some(r) = &self.entire_area {
            r.validate()?;
        }
        if let Some(t) = &self.roi_transform {
            t.validate()?;
        }
        Ok(())
    }
}

/// Keep boxes whose center lies in the region. RoI membership is tested after
/// mapping the center through `config.roi_transform`.
pub fn filter_region(boxes: &[Box3D], region: Region, config: &EvalConfig) -> Vec<Box3D> {
    boxes
        .iter()
        .copied()
        .filter(|b| match region {
            Region::EntireArea => config.entire_area.is_none_or(|r| r.contains(b.center())),
            Region::Roi => {
                let c = match &config.roi_transform {
                    Some(t) => t.apply_point(b.center()),
                    None => b.center(),
                };
                config.roi.contains(c[0], c[1])
            }
        })
        .collect()
}

/// Detections and ground truth of one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameBoxes {
    pub detections: Vec<Box3D>,
    pub ground_truth: Vec<Box3D>,
}

/// Per-class AP (in `[0, 1]`) for one region, plus their mean over the
/// classes that have ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub car: Option<f64>,
    pub pedestrian: Option<f64>,
    pub cyclist: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    pub counts: Vec<ClassCounts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: ObjectClass,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl RegionReport {
    pub fn ap(&self, class: ObjectClass) -> Option<f64> {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub iou_mode: IouMode,
    pub interpolation: Interpolation,
    pub thresholds: [f64; 3],
    pub entire_area: RegionReport,
    pub roi: RegionReport,
}

fn region_report(frames: &[FrameBoxes], region: Region, config: &EvalConfig) -> Result<RegionReport> {
    let filtered: Vec<FrameBoxes> = frames
        .iter()
        .map(|f| FrameBoxes {
            detections: filter_region(&f.detections, region, config),
            ground_truth: filter_region(&f.ground_truth, region, config),
        })
        .collect();
    let curves: Vec<ClassCurve> = ObjectClass::ALL
        .iter()
        .map(|&c| class_curve(&filtered, c, config))
        .collect::<Result<_>>()?;
    let present: Vec<f64> = curves.iter().filter_map(|c| c.ap).collect();
    let map = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(RegionReport {
        car: curves[0].ap,
        pedestrian: curves[1].ap,
        cyclist: curves[2].ap,
        map,
        counts: ObjectClass::ALL
            .iter()
            .zip(&curves)
            .map(|(&class, c)| ClassCounts {
                class,
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
            })
            .collect(),
    })
}

/// Evaluate a set of frames for both regions.
pub fn evaluate_frames(frames: &[FrameBoxes], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    for f in frames {
        for b in f.detections.iter().chain(&f.ground_truth) {
            b.validate()?;
        }
    }
    Ok(EvalReport {
        schema: 1,
        iou_mode: config.iou_mode,
        interpolation: config.interpolation,
        thresholds: config.thresholds,
        entire_area: region_report(frames, Region::EntireArea, config)?,
        roi: region_report(frames, Region::Roi, config)?,
    })
}

/// Evaluate a single frame.
pub fn evaluate(detections: &[Box3D], ground_truth: &[Box3D], config: &EvalConfig) -> Result<EvalReport> {
    evaluate_frames(
        &[FrameBoxes {
            detections: detections.to_vec(),
            ground_truth: ground_truth.to_vec(),
        }],
        config,
    )
}
