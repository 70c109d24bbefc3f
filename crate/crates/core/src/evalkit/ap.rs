use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{box_iou, Box3D, EvalConfig, FrameBoxes, ObjectClass};

/// Recall sampling used to summarize the precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Recall levels 1/40, 2/40, …, 1.
    R40,
    /// Recall levels 0, 0.1, …, 1.
    R11,
}

impl Interpolation {
    fn levels(self) -> Vec<f64> {
        match self {
            Interpolation::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
            Interpolation::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// Result of matching one class across a set of frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    /// `None` when there is no ground truth of this class.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(recall, precision)` after each detection in ranked order.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

struct Ranked {
    score: f64,
    best_iou: f64,
    det: Box3D,
    frame: usize,
    index: usize,
}

fn rank_cmp(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.best_iou.total_cmp(&a.best_iou))
        .then(a.det.geometry_cmp(&b.det))
        .then(a.frame.cmp(&b.frame))
        .then(a.index.cmp(&b.index))
}

/// Greedy matching per frame in ranked order, then one global
/// precision-recall curve over all frames.
///
/// A detection is a true positive when its IoU with the best still-unmatched
/// ground truth is strictly above the class threshold.
pub fn class_curve(frames: &[FrameBoxes], class: ObjectClass, config: &EvalConfig) -> Result<ClassCurve> {
    let threshold = config.threshold(class);
    let mut labelled: Vec<(Ranked, bool)> = Vec::new();
    let mut n_gt = 0;
    for (fi, frame) in frames.iter().enumerate() {
        let gts: Vec<&Box3D> = frame.ground_truth.iter().filter(|b| b.class == class).collect();
        n_gt += gts.len();
        let mut ranked = Vec::new();
        for (di, d) in frame.detections.iter().enumerate().filter(|(_, d)| d.class == class) {
            let score = d
                .score
                .ok_or_else(|| Error::Argument(format!("detection {di} in frame {fi} has no score")))?;
            let mut best_iou: f64 = 0.0;
            for g in &gts {
                best_iou = best_iou.max(box_iou(d, g, config.iou_mode)?);
            }
            ranked.push(Ranked {
                score,
                best_iou,
                det: *d,
                frame: fi,
                index: di,
            });
        }
        ranked.sort_by(rank_cmp);
        let mut matched = vec![false; gts.len()];
        for r in ranked {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if matched[gi] {
                    continue;
                }
                let iou = box_iou(&r.det, g, config.iou_mode)?;
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            let tp = match best {
                Some((gi, iou)) if iou > threshold => {
                    matched[gi] = true;
                    true
                }
                _ => false,
            };
            labelled.push((r, tp));
        }
    }
    labelled.sort_by(|a, b| rank_cmp(&a.0, &b.0));

    let mut curve = Vec::with_capacity(labelled.len());
    let mut tp = 0;
    for (k, (_, is_tp)) in labelled.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        if n_gt > 0 {
            curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
        }
    }
    let fp = labelled.len() - tp;
    let ap = (n_gt > 0).then(|| {
        let levels = config.interpolation.levels();
        let total: f64 = levels
            .iter()
            .map(|&r| {
                curve
                    .iter()
                    .filter(|(rec, _)| *rec >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max)
            })
            .sum();
        total / levels.len() as f64
    });
    Ok(ClassCurve {
        ap,
        tp,
        fp,
        fn_: n_gt - tp,
        curve,
    })
}

/// AP of one class in a single frame; `None` when the class has no ground
/// truth.
pub fn average_precision(
    detections: &[Box3D],
    ground_truth: &[Box3D],
    class: ObjectClass,
    config: &EvalConfig,
) -> Result<Option<f64>> {
    let frame = FrameBoxes {
        detections: detections.to_vec(),
        ground_truth: ground_truth.to_vec(),
    };
    Ok(class_curve(std::slice::from_ref(&frame), class, config)?.ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, score: Option<f64>) -> Box3D {
        let b = Box3D::new(ObjectClass::Car, [x, 0.0, 0.0], [2.0, 4.0, 1.5], 0.0);
        match score {
            Some(s) => b.with_score(s),
            None => b,
        }
    }

    #[test]
    fn single_hit_is_perfect() {
        let cfg = EvalConfig::default();
        let ap = average_precision(&[car(5.0, Some(0.8))], &[car(5.0, None)], ObjectClass::Car, &cfg).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn miss_then_hit_walks_to_half() {
        let cfg = EvalConfig::default();
        let dets = [car(20.0, Some(0.9)), car(5.0, Some(0.4))];
        let curve = class_curve(
            &[FrameBoxes {
                detections: dets.to_vec(),
                ground_truth: vec![car(5.0, None)],
            }],
            ObjectClass::Car,
            &cfg,
        )
        .unwrap();
        assert_eq!(curve.curve, vec![(0.0, 0.0), (1.0, 0.5)]);
        assert_eq!(curve.ap, Some(0.5));
        assert_eq!((curve.tp, curve.fp, curve.fn_), (1, 1, 0));
    }

    #[test]
    fn no_ground_truth_is_absent() {
        let cfg = EvalConfig::default();
        let ap = average_precision(&[car(5.0, Some(0.8))], &[], ObjectClass::Car, &cfg).unwrap();
        assert_eq!(ap, None);
    }

    #[test]
    fn r11_includes_zero_recall() {
        let cfg = EvalConfig {
            interpolation: Interpolation::R11,
            ..EvalConfig::default()
        };
        let gts = [car(5.0, None), car(15.0, None)];
        let ap = average_precision(&[car(5.0, Some(0.8))], &gts, ObjectClass::Car, &cfg).unwrap();
        // recall reaches 0.5 with precision 1: levels 0.0..=0.5 score 1
        assert_eq!(ap, Some(6.0 / 11.0));
    }

    #[test]
    fn missing_score_is_an_error() {
        let cfg = EvalConfig::default();
        assert!(average_precision(&[car(5.0, None)], &[car(5.0, None)], ObjectClass::Car, &cfg).is_err());
    }
}
