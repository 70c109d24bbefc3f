use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{bev_intersection_area, Box3D, ObjectClass};
use crate::geomkit::{RadarFrame, RadarPoint, RigidTransform};
use crate::numkit::Tensor;
use crate::viewtrans::CameraModel;

use super::camera_sim::{rasterize_silhouettes, Silhouette, StubEncoder};
use super::SceneSpec;

const PLACEMENT_RETRIES: usize = 200;
/// Free space kept between footprints, meters.
const CLEARANCE: f64 = 0.8;

/// A labeled object and its ground-plane velocity (m/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: Box3D,
    pub velocity: [f64; 2],
}

/// A static, unlabeled obstacle. `l` runs along `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub ground_z: f64,
}

impl Occluder {
    /// Geometry as a box; the class field carries no meaning here.
    fn solid(&self) -> Box3D {
        Box3D::new(
            ObjectClass::Car,
            [self.x, self.y, self.ground_z + self.h / 2.0],
            [self.w, self.l, self.h],
            self.theta,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub objects: Vec<SceneObject>,
    pub occluders: Vec<Occluder>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    /// Ground truth in the newest frame.
    pub boxes: Vec<Box3D>,
    /// Oldest first; poses are world ← ego with the world fixed to the
    /// newest ego frame.
    pub frames: Vec<RadarFrame>,
    /// Per frame and point: whether the return leaked through an occluder.
    pub xray: Vec<Vec<bool>>,
    pub camera: CameraModel,
    /// `[C, H, W]` stub-encoded image features.
    pub camera_features: Tensor,
}

impl Scene {
    /// Points of the newest sweep.
    pub fn current_points(&self) -> &[RadarPoint] {
        &self.frames.last().expect("at least one frame").points
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn inside_view(b: &Box3D, spec: &SceneSpec, cam: &CameraModel) -> bool {
    let g = &spec.grid;
    let margin = 0.2;
    b.footprint().iter().all(|&[x, y]| {
        let in_grid =
            x >= g.x_min + margin && x < g.x_max() - margin && y >= g.y_min + margin && y < g.y_max() - margin;
        // Keep objects within the horizontal field of view.
        let in_fov = x > 1.0 && (y.abs() / x) * cam.fx < cam.cx;
        in_grid && in_fov
    })
}

fn clear_of(b: &Box3D, others: &[Box3D]) -> bool {
    let grow = |x: &Box3D| Box3D {
        l: x.l + CLEARANCE,
        w: x.w + CLEARANCE,
        ..*x
    };
    let gb = grow(b);
    others
        .iter()
        .all(|o| bev_intersection_area(&gb, o).is_ok_and(|a| a <= 0.0))
}

/// Random non-overlapping placement of the spec's objects and occluders.
pub fn sample_layout<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<SceneLayout> {
    spec.validate()?;
    let cam = CameraModel::toy();
    let g = spec.grid;
    let mut placed: Vec<Box3D> = Vec::new();
    let mut layout = SceneLayout::default();
    for class in ObjectClass::ALL {
        for _ in 0..spec.counts.get(class) {
            let [l, w, h] = spec.sizes.get(class);
            let mut ok = None;
            for _ in 0..PLACEMENT_RETRIES {
                let jitter = rng.random_range(0.95..1.05);
                let theta = if rng.random_bool(0.5) { 0.0 } else { FRAC_PI_2 } + rng.random_range(-0.05..0.05);
                let x = rng.random_range(g.x_min..g.x_max());
                let y = rng.random_range(g.y_min..g.y_max());
                let b = Box3D::new(
                    class,
                    [x, y, spec.ground_z + h * jitter / 2.0],
                    [w * jitter, l * jitter, h * jitter],
                    theta,
                );
                if inside_view(&b, spec, &cam) && clear_of(&b, &placed) {
                    ok = Some(b);
                    break;
                }
            }
            let b = ok.ok_or_else(|| {
                Error::Generation(format!("could not place a {class} after {PLACEMENT_RETRIES} attempts"))
            })?;
            let speed = match class {
                ObjectClass::Car => rng.random_range(0.0..6.0),
                ObjectClass::Pedestrian => rng.random_range(0.5..1.5),
                ObjectClass::Cyclist => rng.random_range(2.0..5.0),
            } * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let (s, c) = b.theta.sin_cos();
            placed.push(b);
            layout.objects.push(SceneObject {
                bbox: b,
                velocity: [speed * c, speed * s],
            });
        }
    }
    for _ in 0..spec.occluders {
        let mut ok = None;
        for _ in 0..PLACEMENT_RETRIES {
            let pole = rng.random_bool(0.5);
            let (l, w) = if pole {
                (0.5, 0.5)
            } else {
                (rng.random_range(1.5..3.0), 0.4)
            };
            let o = Occluder {
                x: rng.random_range(g.x_min + 1.0..g.x_max() - 1.0),
                y: rng.random_range(g.y_min + 1.0..g.y_max() - 1.0),
                l,
                w,
                h: 2.0,
                theta: rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                ground_z: spec.ground_z,
            };
            if clear_of(&o.solid(), &placed) {
                ok = Some(o);
                break;
            }
        }
        let o = ok.ok_or_else(|| {
            Error::Generation(format!(
                "could not place an occluder after {PLACEMENT_RETRIES} attempts"
            ))
        })?;
        placed.push(o.solid());
        layout.occluders.push(o);
    }
    Ok(layout)
}

/// Whether the segment from the origin to `p` passes through `b`'s
/// footprint (slab test in the box frame).
fn blocks(b: &Box3D, p: [f64; 2]) -> bool {
    let (s, c) = b.theta.sin_cos();
    let local = |x: f64, y: f64| {
        let (dx, dy) = (x - b.x, y - b.y);
        [dx * c + dy * s, -dx * s + dy * c]
    };
    let a = local(0.0, 0.0);
    let e = local(p[0], p[1]);
    let half = [b.l / 2.0, b.w / 2.0];
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for k in 0..2 {
        let d = e[k] - a[k];
        if d.abs() < 1e-15 {
            if a[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let mut ta = (-half[k] - a[k]) / d;
        let mut tb = (half[k] - a[k]) / d;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    // Touching only at the far end does not count.
    t0 < 1.0 - 1e-9
}

/// Footprint edges whose outward normal faces the sensor at the origin.
fn visible_edges(b: &Box3D) -> Vec<([f64; 2], [f64; 2])> {
    let fp = b.footprint();
    (0..4)
        .filter_map(|i| {
            let (a, e) = (fp[i], fp[(i + 1) % 4]);
            // CCW polygon: outward normal is the edge direction turned clockwise.
            let n = [e[1] - a[1], -(e[0] - a[0])];
            let mid = [(a[0] + e[0]) / 2.0, (a[1] + e[1]) / 2.0];
            (n[0] * -mid[0] + n[1] * -mid[1] > 0.0).then_some((a, e))
        })
        .collect()
}

struct Sampler<'a> {
    spec: &'a SceneSpec,
    noise: Normal<f64>,
    points: Vec<RadarPoint>,
    xray: Vec<bool>,
}

impl Sampler<'_> {
    fn surface<R: Rng + ?Sized>(&mut self, b: &Box3D, velocity: [f64; 2], n: usize, blockers: &[Box3D], rng: &mut R) {
        let edges = visible_edges(b);
        let lengths: Vec<f64> = edges.iter().map(|(a, e)| (e[0] - a[0]).hypot(e[1] - a[1])).collect();
        let total: f64 = lengths.iter().sum();
        if edges.is_empty() || total <= 0.0 {
            return;
        }
        for _ in 0..n {
            let mut s = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < edges.len() && s >= lengths[k] {
                s -= lengths[k];
                k += 1;
            }
            let (a, e) = edges[k];
            let t = (s / lengths[k]).min(1.0);
            let p = [a[0] + t * (e[0] - a[0]), a[1] + t * (e[1] - a[1])];
            let z = rng.random_range(b.bottom()..b.top());
            let keep_xray = rng.random_bool(self.spec.p_xray);
            let dropped = rng.random_bool(self.spec.dropout);
            let jitter = [self.noise.sample(rng), self.noise.sample(rng), self.noise.sample(rng)];
            let occluded = blockers.iter().any(|o| blocks(o, p));
            if (occluded && !keep_xray) || dropped {
                continue;
            }
            let range = (p[0] * p[0] + p[1] * p[1] + z * z).sqrt().max(1e-9);
            let v_r = (velocity[0] * p[0] + velocity[1] * p[1]) / range;
            self.points
                .push(RadarPoint::new(p[0] + jitter[0], p[1] + jitter[1], z + jitter[2], v_r));
            self.xray.push(occluded);
        }
    }

    fn clutter<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let g = self.spec.grid;
        for _ in 0..self.spec.clutter {
            let p = RadarPoint::new(
                rng.random_range(g.x_min..g.x_max()),
                rng.random_range(g.y_min..g.y_max()),
                rng.random_range(self.spec.ground_z..self.spec.ground_z + 2.0),
                rng.random_range(-0.5..0.5),
            );
            if !rng.random_bool(self.spec.dropout) {
                self.points.push(p);
                self.xray.push(false);
            }
        }
    }
}

/// Simulate both sensors for a fixed layout. Deterministic in
/// `(spec.seed, layout)`.
pub fn render_scene(spec: &SceneSpec, layout: &SceneLayout) -> Result<Scene> {
    spec.validate()?;
    let mut radar_rng = rng_for(spec.seed, 1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut xray = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let age = (spec.frames - 1 - k) as f64 * spec.frame_dt;
        let ego_x = -spec.ego_speed * age;
        let pose = RigidTransform::from_translation([ego_x, 0.0, 0.0]);
        let to_ego = pose.inverse();
        let objects: Vec<(Box3D, [f64; 2])> = layout
            .objects
            .iter()
            .map(|o| {
                let mut b = o.bbox;
                b.x -= o.velocity[0] * age;
                b.y -= o.velocity[1] * age;
                (b.transformed(&to_ego), o.velocity)
            })
            .collect();
        let occluders: Vec<Box3D> = layout
            .occluders
            .iter()
            .map(|o| o.solid().transformed(&to_ego))
            .collect();
        let solids: Vec<Box3D> = objects.iter().map(|o| o.0).chain(occluders.iter().copied()).collect();

        let mut sampler = Sampler {
            spec,
            noise,
            points: Vec::new(),
            xray: Vec::new(),
        };
        for (i, (b, v)) in objects.iter().enumerate() {
            let blockers: Vec<Box3D> = solids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| *s)
                .collect();
            sampler.surface(b, *v, spec.returns.get(b.class), &blockers, &mut radar_rng);
        }
        for (i, o) in occluders.iter().enumerate() {
            let own = objects.len() + i;
            let blockers: Vec<Box3D> = solids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != own)
                .map(|(_, s)| *s)
                .collect();
            sampler.surface(o, [0.0, 0.0], spec.occluder_returns, &blockers, &mut radar_rng);
        }
        sampler.clutter(&mut radar_rng);
        frames.push(RadarFrame {
            points: sampler.points,
            pose,
        });
        xray.push(sampler.xray);
    }

    let camera = CameraModel::toy();
    let mut silhouettes: Vec<Silhouette> = layout
        .objects
        .iter()
        .map(|o| Silhouette::new(&o.bbox, Some(o.bbox.class)))
        .collect();
    silhouettes.extend(layout.occluders.iter().map(|o| Silhouette::new(&o.solid(), None)));
    let mut cam_rng = rng_for(spec.seed, 2);
    let raster = rasterize_silhouettes(&camera, &silhouettes, spec.depth_cue_noise, &mut cam_rng);
    let encoder = StubEncoder::new(spec.feature_channels, spec.encoder_seed);
    let camera_features = encoder.encode(&raster)?;

    Ok(Scene {
        seed: spec.seed,
        boxes: layout.objects.iter().map(|o| o.bbox).collect(),
        frames,
        xray,
        camera,
        camera_features,
    })
}

/// Sample a layout from `spec.seed` and simulate it.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let layout = sample_layout(spec, &mut rng_for(spec.seed, 0))?;
    render_scene(spec, &layout)
}
