//! Independent reference implementations and the property checks built on
//! them. Shared by the per-module integration tests and the acceptance
//! runner, so each check returns a one-line summary instead of panicking.
#![allow(dead_code)]

use std::collections::BTreeMap;

use radcam_core::evalkit::{evaluate, read_boxes_jsonl, rotated_iou_bev, Box3D, EvalConfig, ObjectClass, RegionReport};
use radcam_core::fuser::{dca_forward, dca_forward_cached, DcaConfig, DcaParams, FeatureMap, Modality};
use radcam_core::geomkit::RigidTransform;
use radcam_core::geomkit::{voxelize, RadarPoint, RangeSpec, VoxelSpec};
use radcam_core::numkit::{Linear, Tensor};
use radcam_core::viewtrans::{
    lss_forward, splat_to_bev, BevGrid, CameraModel, DepthBins, LssParams, LssVariant, SplatPlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Ok(summary)` or `Err(first violation)`.
pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::random_uniform(shape, lo, hi, rng)
}

fn fmap(t: Tensor, m: Modality) -> FeatureMap {
    FeatureMap::new(t, m, 1.0).unwrap()
}

// ---------------------------------------------------------------------------
// Deformable cross attention

/// Zero-padded bilinear read of channel `ch` of a `[C, H, W]` map at
/// continuous `(row, col)`.
pub fn bilinear_ref(map: &Tensor, ch: usize, row: f64, col: f64) -> f64 {
    let (h, w) = (map.dim(1) as f64, map.dim(2) as f64);
    let (r0, c0) = (row.floor(), col.floor());
    let (ar, ac) = (row - r0, col - c0);
    let at = |r: f64, c: f64| {
        if r < 0.0 || c < 0.0 || r >= h || c >= w {
            0.0
        } else {
            map.data()[ch * (h * w) as usize + (r * w + c) as usize]
        }
    };
    (1.0 - ar) * (1.0 - ac) * at(r0, c0)
        + (1.0 - ar) * ac * at(r0, c0 + 1.0)
        + ar * (1.0 - ac) * at(r0 + 1.0, c0)
        + ar * ac * at(r0 + 1.0, c0 + 1.0)
}

fn affine(x: &[f64], l: &Linear, j: usize) -> f64 {
    let cols = l.bias.len();
    l.bias.data()[j]
        + x.iter()
            .enumerate()
            .map(|(i, v)| v * l.weight.data()[i * cols + j])
            .sum::<f64>()
}

/// Literal per-query transcription of deformable cross attention: sample the
/// raw other-modality map at each offset point, project the sample by the
/// head's value columns, weight by the softmaxed logits, concatenate heads,
/// apply the output projection.
pub fn dca_ref(p: &DcaParams, query: &Tensor, kv: &Tensor) -> Tensor {
    let cfg = p.config;
    let (c, heads, points, d) = (cfg.channels, cfg.heads, cfg.points, cfg.head_dim());
    let (h, w) = (query.dim(1), query.dim(2));
    let mut out = Tensor::zeros(&[c, h, w]);
    for r in 0..h {
        for col in 0..w {
            let z: Vec<f64> = (0..c).map(|i| query.data()[(i * h + r) * w + col]).collect();
            let mut cat = vec![0.0; c];
            for hh in 0..heads {
                let logits: Vec<f64> = (0..points).map(|n| affine(&z, &p.attention, hh * points + n)).collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for n in 0..points {
                    let k = hh * points + n;
                    let pr = r as f64 + affine(&z, &p.offset, 2 * k);
                    let pc = col as f64 + affine(&z, &p.offset, 2 * k + 1);
                    let x: Vec<f64> = (0..c).map(|i| bilinear_ref(kv, i, pr, pc)).collect();
                    for j in 0..d {
                        let v: f64 = (0..c).map(|i| x[i] * p.value.data()[i * c + hh * d + j]).sum();
                        cat[hh * d + j] += e[n] / s * v;
                    }
                }
            }
            for o in 0..c {
                out.data_mut()[(o * h + r) * w + col] = affine(&cat, &p.output, o);
            }
        }
    }
    out
}

/// Random config with `heads ≤ 3`, `head_dim ≤ 3`, `points ≤ 4` on a grid
/// of 3 to 7 cells per side; dense parameters with offsets of up to a few
/// cells so that some samples fall off the grid.
pub fn random_dca_case(rng: &mut ChaCha8Rng) -> (DcaParams, Tensor, Tensor) {
    let heads = rng.random_range(1..=3);
    let hd = rng.random_range(1..=3);
    let points = rng.random_range(1..=4);
    let cfg = DcaConfig::new(heads * hd, heads, points).unwrap();
    let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
    let c = cfg.channels;
    let params = DcaParams {
        config: cfg,
        offset: Linear {
            weight: uniform(&[c, cfg.offset_width()], -0.5, 0.5, rng),
            bias: uniform(&[cfg.offset_width()], -2.5, 2.5, rng),
        },
        attention: Linear {
            weight: uniform(&[c, cfg.weight_width()], -2.0, 2.0, rng),
            bias: uniform(&[cfg.weight_width()], -1.0, 1.0, rng),
        },
        value: uniform(&[c, c], -1.0, 1.0, rng),
        output: Linear {
            weight: uniform(&[c, c], -1.0, 1.0, rng),
            bias: uniform(&[c], -1.0, 1.0, rng),
        },
    };
    let q = uniform(&[c, h, w], -1.0, 1.0, rng);
    let kv = uniform(&[c, h, w], -1.0, 1.0, rng);
    (params, q, kv)
}

pub fn check_dca_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (p, q, kv) = random_dca_case(&mut rng);
        let got = dca_forward(
            &p,
            &fmap(q.clone(), Modality::Radar),
            &fmap(kv.clone(), Modality::Camera),
        )
        .map_err(|e| format!("case {i}: {e}"))?;
        let err = got.tensor.max_abs_diff(&dca_ref(&p, &q, &kv));
        if !(err < 1e-12) {
            return Err(format!("case {i} ({:?}): max |diff| {err:.3e}", p.config));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} configs, max |diff| {worst:.2e} (tol 1e-12)"))
}

pub fn check_degenerate_identity(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (p, q, kv) = random_dca_case(&mut rng);
        let deg = DcaParams::degenerate(p.config).unwrap();
        let out = dca_forward(&deg, &fmap(q, Modality::Radar), &fmap(kv.clone(), Modality::Camera))
            .map_err(|e| format!("case {i}: {e}"))?;
        let err = out.tensor.max_abs_diff(&kv);
        if !(err <= 1e-12) {
            return Err(format!("case {i}: degenerate output differs from kv by {err:.3e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} instances, max |out - kv| {worst:.2e}"))
}

/// Copy of `x` moved by `(dr, dc)` cells; uncovered cells get fresh noise.
fn shifted(x: &Tensor, dr: isize, dc: isize, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, h, w) = (x.dim(0), x.dim(1) as isize, x.dim(2) as isize);
    let mut out = uniform(x.shape(), -1.0, 1.0, rng);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let (r2, c2) = (r + dr, col + dc);
                if (0..h).contains(&r2) && (0..w).contains(&c2) {
                    out.data_mut()[(ch * h as usize + r2 as usize) * w as usize + c2 as usize] =
                        x.data()[(ch * h as usize + r as usize) * w as usize + col as usize];
                }
            }
        }
    }
    out
}

/// Shifting both maps by whole cells shifts the output bit for bit at every
/// query whose sample footprint stays `max|Δp| + 1` cells inside the grid
/// in both frames.
pub fn check_translation_equivariance(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut compared = 0usize;
    for i in 0..cases {
        let heads = rng.random_range(1..=2);
        let cfg = DcaConfig::new(heads * rng.random_range(1..=3), heads, rng.random_range(1..=3)).unwrap();
        let p = DcaParams::random(cfg, &mut rng).unwrap();
        let (h, w) = (rng.random_range(10..=14), rng.random_range(10..=14));
        let q = uniform(&[cfg.channels, h, w], -1.0, 1.0, &mut rng);
        let kv = uniform(&[cfg.channels, h, w], -1.0, 1.0, &mut rng);
        let (dr, dc) = loop {
            let t = (
                rng.random_range(-2..=2i64) as isize,
                rng.random_range(-2..=2i64) as isize,
            );
            if t != (0, 0) {
                break t;
            }
        };
        let (q2, kv2) = (shifted(&q, dr, dc, &mut rng), shifted(&kv, dr, dc, &mut rng));
        let (out, cache) = dca_forward_cached(&p, &fmap(q, Modality::Radar), &fmap(kv, Modality::Camera))
            .map_err(|e| e.to_string())?;
        let out2 =
            dca_forward(&p, &fmap(q2, Modality::Radar), &fmap(kv2, Modality::Camera)).map_err(|e| e.to_string())?;
        let hn = cfg.weight_width();
        let max_off = cache
            .sample_positions()
            .iter()
            .enumerate()
            .map(|(k, &(pr, pc))| {
                let t = k / hn;
                (pr - (t / w) as f64).abs().max((pc - (t % w) as f64).abs())
            })
            .fold(0.0, f64::max);
        let m = max_off.ceil() as isize + 1;
        let interior = |r: isize, c: isize| r >= m && c >= m && r < h as isize - m && c < w as isize - m;
        let mut n = 0;
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (r2, c2) = (r + dr, c + dc);
                if !(interior(r, c) && interior(r2, c2)) {
                    continue;
                }
                for ch in 0..cfg.channels {
                    let a = out.tensor.data()[(ch * h + r as usize) * w + c as usize];
                    let b = out2.tensor.data()[(ch * h + r2 as usize) * w + c2 as usize];
                    if a.to_bits() != b.to_bits() {
                        return Err(format!(
                            "case {i}: shift {:?} breaks cell ({r}, {c}) channel {ch}: {a} vs {b}",
                            (dr, dc)
                        ));
                    }
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(format!("case {i}: no interior queries to compare"));
        }
        compared += n;
    }
    Ok(format!("{cases} instances, {compared} interior queries bit-identical"))
}

pub fn check_attention_normalization(cases: usize, seed: u64) -> Result<(usize, f64), String> {
    let mut rng = rng(seed);
    let (mut groups, mut worst) = (0usize, 0.0f64);
    for i in 0..cases {
        let (mut p, q, kv) = random_dca_case(&mut rng);
        // wide logits stress the max-shift
        p.attention.weight.scale(rng.random_range(1.0..50.0));
        let (_, cache) = dca_forward_cached(&p, &fmap(q, Modality::Radar), &fmap(kv, Modality::Camera))
            .map_err(|e| format!("case {i}: {e}"))?;
        for g in cache.attention_weights().chunks(p.config.points) {
            let err = (g.iter().sum::<f64>() - 1.0).abs();
            if !(err <= 1e-12) || g.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(format!("case {i}: attention group {g:?} off by {err:.3e}"));
            }
            worst = worst.max(err);
            groups += 1;
        }
    }
    Ok((groups, worst))
}

pub fn check_depth_normalization(cases: usize, seed: u64) -> Result<(usize, f64), String> {
    let mut rng = rng(seed);
    let (mut pixels, mut worst) = (0usize, 0.0f64);
    for i in 0..cases {
        let variant = LssVariant::ALL[i % 3];
        let c = rng.random_range(1..=4);
        let bins = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let p = LssParams::random(variant, c, bins, &mut rng).map_err(|e| e.to_string())?;
        let x = uniform(&[c, h, w], -10.0, 10.0, &mut rng);
        let d = uniform(&[1, h, w], 0.0, 20.0, &mut rng);
        let out = lss_forward(&p, &x, Some(&d)).map_err(|e| format!("case {i}: {e}"))?;
        for px in 0..h * w {
            let s: f64 = (0..bins).map(|k| out.depth.data()[k * h * w + px]).sum();
            let err = (s - 1.0).abs();
            if !(err <= 1e-12) {
                return Err(format!("case {i} ({}): pixel {px} depth sums to {s}", variant.name()));
            }
            worst = worst.max(err);
            pixels += 1;
        }
    }
    Ok((pixels, worst))
}

// ---------------------------------------------------------------------------
// Splatting

/// Forward-looking camera at `pos` turned by `yaw` about +z, built from
/// scratch rather than through the crate's transform helpers.
pub struct RandomCamera {
    pub cam: CameraModel,
    pub bins: DepthBins,
    pub grid: BevGrid,
    yaw: f64,
    pos: [f64; 3],
}

impl RandomCamera {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let (height, width) = (rng.random_range(2..=6), rng.random_range(2..=8));
        let yaw: f64 = rng.random_range(-0.5..0.5);
        let pos = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..2.0),
        ];
        // camera ← BEV: x_cam = −y, y_cam = −z, z_cam = x, after undoing yaw
        let (s, c) = yaw.sin_cos();
        let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
        let mut translation = [0.0; 3];
        for i in 0..3 {
            translation[i] = -(0..3).map(|k| rotation[i][k] * pos[k]).sum::<f64>();
        }
        let cam = CameraModel {
            fx: rng.random_range(1.0..8.0),
            fy: rng.random_range(1.0..8.0),
            cx: rng.random_range(0.0..(width - 1) as f64),
            cy: rng.random_range(0.0..(height - 1) as f64),
            extrinsic: RigidTransform {
                rotation,
                translation,
                ..RigidTransform::identity()
            },
            height,
            width,
        };
        let min = rng.random_range(0.5..2.0);
        let bins = DepthBins::new(rng.random_range(2..=6), min, min + rng.random_range(2.0..20.0)).unwrap();
        let (rows, cols) = (rng.random_range(4..=16), rng.random_range(4..=16));
        let resolution = rng.random_range(0.25..1.5);
        let grid = BevGrid {
            rows,
            cols,
            resolution,
            x_min: rng.random_range(-2.0..2.0),
            y_min: -(cols as f64) * resolution / 2.0 + rng.random_range(-1.0..1.0),
        };
        RandomCamera {
            cam,
            bins,
            grid,
            yaw,
            pos,
        }
    }

    /// BEV cell of frustum cell `(d, row, col)` by direct ray geometry.
    pub fn cell(&self, d: usize, row: usize, col: usize) -> Option<(usize, usize)> {
        let b = &self.bins;
        let z = b.min + (d as f64 + 0.5) * (b.max - b.min) / b.count as f64;
        let right = (col as f64 - self.cam.cx) / self.cam.fx * z;
        let down = (row as f64 - self.cam.cy) / self.cam.fy * z;
        let (s, c) = self.yaw.sin_cos();
        // forward = (c, s), left = (−s, c)
        let x = self.pos[0] + z * c + right * s;
        let y = self.pos[1] + z * s - right * c;
        let _ = down;
        let g = &self.grid;
        let r = ((x - g.x_min) / g.resolution).floor();
        let cc = ((y - g.y_min) / g.resolution).floor();
        (r >= 0.0 && cc >= 0.0 && r < g.rows as f64 && cc < g.cols as f64).then_some((r as usize, cc as usize))
    }
}

/// Per-cell brute-force splat of `frustum: [C, D, H, W]`.
pub fn splat_ref(rc: &RandomCamera, frustum: &Tensor) -> Tensor {
    let (c, d, h, w) = (frustum.dim(0), frustum.dim(1), frustum.dim(2), frustum.dim(3));
    let g = rc.grid;
    let mut out = Tensor::zeros(&[c, g.rows, g.cols]);
    for ch in 0..c {
        for k in 0..d {
            for r in 0..h {
                for col in 0..w {
                    if let Some((br, bc)) = rc.cell(k, r, col) {
                        out.data_mut()[(ch * g.rows + br) * g.cols + bc] +=
                            frustum.data()[((ch * d + k) * h + r) * w + col];
                    }
                }
            }
        }
    }
    out
}

pub fn check_splat_conservation(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (mut worst, mut inside, mut total) = (0.0f64, 0usize, 0usize);
    for i in 0..cases {
        let rc = RandomCamera::sample(&mut rng);
        let c = rng.random_range(1..=3);
        let f = uniform(&[c, rc.bins.count, rc.cam.height, rc.cam.width], 0.0, 1.0, &mut rng);
        let plan = SplatPlan::new(&rc.cam, &rc.bins, rc.grid).map_err(|e| e.to_string())?;
        let bev = splat_to_bev(&f, &plan).map_err(|e| e.to_string())?;
        let (d, h, w) = (rc.bins.count, rc.cam.height, rc.cam.width);
        for ch in 0..c {
            let mut mass = 0.0;
            for k in 0..d {
                for r in 0..h {
                    for col in 0..w {
                        total += 1;
                        if rc.cell(k, r, col).is_some() {
                            inside += 1;
                            mass += f.data()[((ch * d + k) * h + r) * w + col];
                        }
                    }
                }
            }
            let cells = rc.grid.cells();
            let got: f64 = bev.tensor.data()[ch * cells..(ch + 1) * cells].iter().sum();
            let err = (got - mass).abs();
            if !(err <= 1e-9) {
                return Err(format!(
                    "frustum {i} channel {ch}: BEV mass {got} vs in-range mass {mass}"
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "{cases} frustums ({inside}/{total} cells in range), max |mass diff| {worst:.2e} (tol 1e-9)"
    ))
}

// ---------------------------------------------------------------------------
// Geometry

/// Voxel index per axis by scanning every interval `[min + i·s, min + (i+1)·s)`.
pub fn voxel_index_ref(p: [f64; 3], spec: &VoxelSpec, range: &RangeSpec, dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut idx = [0; 3];
    for a in 0..3 {
        let hits: Vec<usize> = (0..dims[a])
            .filter(|&i| {
                let lo = range.min[a] + i as f64 * spec.size[a];
                let hi = range.min[a] + (i + 1) as f64 * spec.size[a];
                lo <= p[a] && p[a] < hi
            })
            .collect();
        match hits.as_slice() {
            [i] => idx[a] = *i,
            _ => return None,
        }
    }
    Some(idx)
}

/// Random in-grid points spread over 100 voxels, one in ten snapped onto a
/// voxel's lower corner.
pub fn random_voxel_points(
    n: usize,
    spec: &VoxelSpec,
    range: &RangeSpec,
    dims: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> Vec<RadarPoint> {
    let pool: Vec<[usize; 3]> = (0..100).map(|_| dims.map(|d| rng.random_range(0..d))).collect();
    (0..n)
        .map(|k| {
            let idx = pool[rng.random_range(0..pool.len())];
            let mut c = [0.0; 3];
            for a in 0..3 {
                let lo = range.min[a] + idx[a] as f64 * spec.size[a];
                c[a] = if k % 10 == 0 {
                    lo
                } else {
                    lo + rng.random_range(0.0..1.0) * spec.size[a]
                };
            }
            RadarPoint::new(c[0], c[1], c[2], rng.random_range(-10.0..10.0))
        })
        .collect()
}

pub fn check_voxelization(n: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (spec, range) = (VoxelSpec::FULL_SCALE, RangeSpec::FULL_SCALE_PCR);
    let dims = [0, 1, 2].map(|a| ((range.max[a] - range.min[a]) / spec.size[a] + 1e-9).floor() as usize);
    let points = random_voxel_points(n, &spec, &range, dims, &mut rng);
    let grid = voxelize(&points, &spec, &range).map_err(|e| e.to_string())?;
    if grid.dims != dims {
        return Err(format!("grid dims {:?}, expected {dims:?}", grid.dims));
    }
    let mut expected: BTreeMap<[usize; 3], Vec<RadarPoint>> = BTreeMap::new();
    for p in &points {
        let idx = voxel_index_ref(p.xyz(), &spec, &range, dims).ok_or_else(|| format!("{p:?} has no unique voxel"))?;
        expected.entry(idx).or_default().push(*p);
    }
    if expected.len() != grid.voxels.len() {
        return Err(format!(
            "{} occupied voxels, brute force finds {}",
            grid.voxels.len(),
            expected.len()
        ));
    }
    for (idx, pts) in &expected {
        let v = grid.voxels.get(idx).ok_or_else(|| format!("voxel {idx:?} missing"))?;
        if &v.points != pts {
            return Err(format!("voxel {idx:?} holds different points"));
        }
        let k = pts.len() as f64;
        let mean = |f: fn(&RadarPoint) -> f64| pts.iter().map(f).sum::<f64>() / k;
        let want = [mean(|p| p.x), mean(|p| p.y), mean(|p| p.z), mean(|p| p.v_r), k];
        if v.feature != want {
            return Err(format!("voxel {idx:?} feature {:?}, expected {want:?}", v.feature));
        }
    }
    Ok(format!(
        "{n} points in {} voxels, assignment and pooling identical",
        expected.len()
    ))
}

/// Monte Carlo BEV IoU: jittered-grid samples over the smaller footprint.
pub fn mc_iou(a: &Box3D, b: &Box3D, side: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (small, big) = if a.w * a.l <= b.w * b.l { (a, b) } else { (b, a) };
    let (s, c) = small.theta.sin_cos();
    let (bs, bc) = big.theta.sin_cos();
    let mut hits = 0usize;
    for i in 0..side {
        for j in 0..side {
            let u = ((i as f64 + rng.random::<f64>()) / side as f64 - 0.5) * small.l;
            let v = ((j as f64 + rng.random::<f64>()) / side as f64 - 0.5) * small.w;
            let x = small.x + u * c - v * s;
            let y = small.y + u * s + v * c;
            let (dx, dy) = (x - big.x, y - big.y);
            if (dx * bc + dy * bs).abs() <= big.l / 2.0 && (-dx * bs + dy * bc).abs() <= big.w / 2.0 {
                hits += 1;
            }
        }
    }
    let (sa, ba) = (small.w * small.l, big.w * big.l);
    let inter = sa * hits as f64 / (side * side) as f64;
    inter / (sa + ba - inter)
}

pub fn random_box(rng: &mut ChaCha8Rng, near: Option<&Box3D>) -> Box3D {
    let (x, y) = match near {
        Some(b) => (b.x + rng.random_range(-1.5..1.5), b.y + rng.random_range(-1.5..1.5)),
        None => (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
    };
    Box3D::new(
        ObjectClass::Car,
        [x, y, rng.random_range(-1.0..1.0)],
        [
            rng.random_range(0.5..3.0),
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..2.0),
        ],
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

pub fn check_iou_monte_carlo(pairs: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut overlapping = 0;
    for i in 0..pairs {
        let a = random_box(&mut rng, None);
        let b = random_box(&mut rng, Some(&a));
        let exact = rotated_iou_bev(&a, &b).map_err(|e| e.to_string())?;
        let mc = mc_iou(&a, &b, 1000, &mut rng);
        let err = (exact - mc).abs();
        if !(err < 2e-3) {
            return Err(format!("pair {i}: IoU {exact:.6} vs Monte Carlo {mc:.6}"));
        }
        overlapping += usize::from(exact > 0.0);
        worst = worst.max(err);
    }
    let unit = Box3D::new(ObjectClass::Car, [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
    let turned = Box3D {
        theta: std::f64::consts::FRAC_PI_4,
        ..unit
    };
    let octagon = 2.0 * (2.0f64.sqrt() - 1.0);
    let iou = rotated_iou_bev(&unit, &turned).map_err(|e| e.to_string())?;
    let inter = iou * 2.0 / (1.0 + iou);
    let mc = mc_iou(&unit, &turned, 1000, &mut rng);
    if !((inter - octagon).abs() < 2e-3 && (mc - iou).abs() < 2e-3) {
        return Err(format!(
            "45 degree case: intersection {inter:.6} vs 2(sqrt2-1) = {octagon:.6}, Monte Carlo IoU {mc:.6}"
        ));
    }
    Ok(format!(
        "{pairs} pairs ({overlapping} overlapping), 1e6 samples each, max |diff| {worst:.2e}; 45 degree intersection {inter:.6} vs {octagon:.6}"
    ))
}

// ---------------------------------------------------------------------------
// Hand-computed evaluation fixture

pub const FIXTURE_GT: &str = include_str!("../fixtures/eval_scene/ground_truth.jsonl");
pub const FIXTURE_DETS: &str = include_str!("../fixtures/eval_scene/detections.jsonl");
pub const FIXTURE_EXPECTED: &str = include_str!("../fixtures/eval_scene/expected.json");

fn region_matches(name: &str, got: &RegionReport, want: &serde_json::Value) -> Result<(), String> {
    let ap = |v: &serde_json::Value| v.as_f64();
    let pairs = [
        ("car", got.car),
        ("pedestrian", got.pedestrian),
        ("cyclist", got.cyclist),
        ("mAP", got.map),
    ];
    for (key, value) in pairs {
        let expected = ap(&want[key]);
        let ok = match (value, expected) {
            (Some(g), Some(e)) => (g - e).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        if !ok {
            return Err(format!("{name} {key}: got {value:?}, sheet says {expected:?}"));
        }
    }
    for (counts, want) in got
        .counts
        .iter()
        .zip(want["counts"].as_array().ok_or("counts missing")?)
    {
        let w = |k: &str| want[k].as_u64().unwrap_or(u64::MAX) as usize;
        if (counts.tp, counts.fp, counts.fn_) != (w("tp"), w("fp"), w("fn")) {
            return Err(format!("{name} {}: counts {counts:?}, sheet says {want}", counts.class));
        }
    }
    Ok(())
}

pub fn check_eval_fixture() -> Check {
    let gt = read_boxes_jsonl(FIXTURE_GT.as_bytes()).map_err(|e| e.to_string())?;
    let dets = read_boxes_jsonl(FIXTURE_DETS.as_bytes()).map_err(|e| e.to_string())?;
    let want: serde_json::Value = serde_json::from_str(FIXTURE_EXPECTED).map_err(|e| e.to_string())?;
    let cfg = EvalConfig::default();
    if cfg.thresholds != [0.5, 0.25, 0.25] {
        return Err(format!("default thresholds {:?}", cfg.thresholds));
    }
    if (cfg.roi.x, cfg.roi.y) != ([0.0, 25.0], [-4.0, 4.0]) {
        return Err(format!("default corridor x {:?} y {:?}", cfg.roi.x, cfg.roi.y));
    }
    let report = evaluate(&dets, &gt, &cfg).map_err(|e| e.to_string())?;
    region_matches("entire area", &report.entire_area, &want["entire_area"])?;
    region_matches("roi", &report.roi, &want["roi"])?;
    let mut shuffled = dets.clone();
    shuffled.reverse();
    if evaluate(&shuffled, &gt, &cfg).map_err(|e| e.to_string())? != report {
        return Err("report depends on detection order".into());
    }
    Ok(format!(
        "{} GT / {} detections: EA mAP {:.6}, RoI mAP {:.6}, per-class APs and TP/FP/FN match the sheet",
        gt.len(),
        dets.len(),
        report.entire_area.map.unwrap_or(f64::NAN),
        report.roi.map.unwrap_or(f64::NAN)
    ))
}
