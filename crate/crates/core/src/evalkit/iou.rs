use std::cmp::Ordering;

use crate::error::Result;

use super::{Box3D, IouMode};

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        s += p[0] * q[1] - p[1] * q[0];
    }
    s / 2.0
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex, counter-clockwise
/// polygon `clip`. Vertices within a small tolerance of a clip edge count as
/// inside, so edge intersections are only computed between well-separated
/// points.
pub fn convex_clip(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let extent = subject
        .iter()
        .chain(clip)
        .fold(1.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let tol = 1e-12 * extent * extent;
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            let (cur_in, prev_in) = (dc >= -tol, dp >= -tol);
            if cur_in {
                if !prev_in && dc > tol {
                    let t = dp / (dp - dc);
                    out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
                }
                out.push(cur);
            } else if prev_in && dp > tol {
                let t = dp / (dp - dc);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
        }
    }
    out
}

/// Put the pair in a canonical order so the result is exactly symmetric.
fn ordered<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    if a.geometry_cmp(b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// `(intersection, area of a, area of b)`; the areas stay in argument order.
fn bev_overlap(a: &Box3D, b: &Box3D) -> (f64, f64, f64) {
    let (p, q) = ordered(a, b);
    let inter = polygon_area(&convex_clip(&p.footprint(), &q.footprint())).max(0.0);
    (inter, a.l * a.w, b.l * b.w)
}

/// Area shared by the two oriented footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(bev_overlap(a, b).0)
}

/// Intersection over union of the two oriented footprints.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (inter, area_a, area_b) = bev_overlap(a, b);
    Ok((inter / (area_a + area_b - inter)).clamp(0.0, 1.0))
}

/// Volume IoU: BEV overlap times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (inter_bev, area_a, area_b) = bev_overlap(a, b);
    let dz = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    let inter = inter_bev * dz;
    let union = area_a * a.h + area_b * b.h - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn box_iou(a: &Box3D, b: &Box3D, mode: IouMode) -> Result<f64> {
    match mode {
        IouMode::Bev => rotated_iou_bev(a, b),
        IouMode::ThreeD => iou_3d(a, b),
    }
}
