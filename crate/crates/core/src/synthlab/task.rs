//! Per-cell occupancy: the stand-in detection objective.

use crate::error::Result;
use crate::evalkit::{Box3D, ObjectClass};
use crate::fuser::FeatureMap;
use crate::numkit::{bce_with_logits_mean, Conv2d, Tensor};
use crate::viewtrans::BevGrid;

use super::ClassSizes;

/// `[3, rows, cols]` with 1 where a cell center lies in a box footprint of
/// that class.
pub fn occupancy_targets(boxes: &[Box3D], grid: &BevGrid) -> Tensor {
    let cells = grid.cells();
    let mut t = Tensor::zeros(&[ObjectClass::ALL.len(), grid.rows, grid.cols]);
    let data = t.data_mut();
    for b in boxes {
        let k = b.class.index();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let (x, y) = grid.cell_center(r, c);
                if b.contains_xy(x, y) {
                    data[k * cells + r * grid.cols + c] = 1.0;
                }
            }
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct ToyLoss {
    pub loss: f64,
    /// `[3, rows, cols]` head output.
    pub logits: Tensor,
    pub dfused: Tensor,
    pub dhead: Conv2d,
}

/// Mean binary cross-entropy of a 1×1 head on `fused` against the
/// occupancy targets of `boxes`.
pub fn toy_task_loss(fused: &FeatureMap, boxes: &[Box3D], head: &Conv2d, grid: &BevGrid) -> Result<ToyLoss> {
    let logits = head.forward(&fused.tensor)?;
    let targets = occupancy_targets(boxes, grid);
    let (loss, dlogits) = bce_with_logits_mean(&logits, &targets)?;
    let (dfused, dhead) = head.backward(&fused.tensor, &dlogits)?;
    Ok(ToyLoss {
        loss,
        logits,
        dfused,
        dhead,
    })
}

/// Threshold per-class probabilities, take 4-connected components and
/// return one axis-aligned box per component scored by its mean
/// probability. Heights come from the class priors, resting on `ground_z`.
pub fn decode_boxes(probs: &Tensor, grid: &BevGrid, threshold: f64, sizes: &ClassSizes, ground_z: f64) -> Vec<Box3D> {
    let (rows, cols) = (grid.rows, grid.cols);
    let cells = rows * cols;
    let mut out = Vec::new();
    for class in ObjectClass::ALL {
        let p = &probs.data()[class.index() * cells..(class.index() + 1) * cells];
        let mut seen = vec![false; cells];
        for start in 0..cells {
            if seen[start] || p[start] < threshold {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let (mut r0, mut r1, mut c0, mut c1) = (rows, 0, cols, 0);
            let (mut sum, mut n) = (0.0, 0usize);
            while let Some(i) = stack.pop() {
                let (r, c) = (i / cols, i % cols);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
                sum += p[i];
                n += 1;
                let mut push = |j: usize| {
                    if !seen[j] && p[j] >= threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if r > 0 {
                    push(i - cols);
                }
                if r + 1 < rows {
                    push(i + cols);
                }
                if c > 0 {
                    push(i - 1);
                }
                if c + 1 < cols {
                    push(i + 1);
                }
            }
            let res = grid.resolution;
            let l = (r1 - r0 + 1) as f64 * res;
            let w = (c1 - c0 + 1) as f64 * res;
            let x = grid.x_min + r0 as f64 * res + l / 2.0;
            let y = grid.y_min + c0 as f64 * res + w / 2.0;
            let h = sizes.get(class)[2];
            out.push(
                Box3D::new(class, [x, y, ground_z + h / 2.0], [w, l, h], 0.0)
                    .with_score((sum / n as f64).clamp(0.0, 1.0)),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuser::Modality;

    #[test]
    fn zero_logits_cost_ln2() {
        let grid = BevGrid::default();
        let fused = FeatureMap::new(Tensor::zeros(&[4, 32, 32]), Modality::Fused, 0.4).unwrap();
        let head = Conv2d::zeros(4, 3, 1);
        let b = Box3D::new(ObjectClass::Car, [5.0, 0.0, 0.0], [1.8, 4.0, 1.5], 0.0);
        let l = toy_task_loss(&fused, &[b], &head, &grid).unwrap();
        // 3072 summed terms drift by a few ulps of the total
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_map_decodes_nothing() {
        let grid = BevGrid::default();
        let probs = Tensor::zeros(&[3, 32, 32]);
        assert!(decode_boxes(&probs, &grid, 0.5, &ClassSizes::default(), -1.0).is_empty());
    }

    #[test]
    fn rectangle_blob() {
        let grid = BevGrid::default();
        let mut probs = Tensor::zeros(&[3, 32, 32]);
        for r in 10..20 {
            for c in 14..19 {
                probs.data_mut()[r * 32 + c] = 1.0;
            }
        }
        let d = decode_boxes(&probs, &grid, 0.5, &ClassSizes::default(), -1.0);
        assert_eq!(d.len(), 1);
        let b = d[0];
        assert_eq!(b.class, ObjectClass::Car);
        assert_eq!(b.score, Some(1.0));
        assert!((b.l - 4.0).abs() < 1e-12 && (b.w - 2.0).abs() < 1e-12);
        assert!((b.x - 6.0).abs() < 1e-12 && (b.y - (-6.4 + 16.5 * 0.4)).abs() < 1e-12);
    }
}
