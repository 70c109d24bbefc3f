use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::evalkit::{Box3D, ObjectClass};
use crate::numkit::{gelu, Conv2d, Tensor};
use crate::viewtrans::CameraModel;

/// Car, pedestrian, cyclist, occluder, inverse-depth cue, free space.
pub const SILHOUETTE_CHANNELS: usize = 6;
const OCCLUDER_CHANNEL: usize = 3;
const DEPTH_CHANNEL: usize = 4;
const FREE_CHANNEL: usize = 5;

/// A solid to paint: its eight corners and the channel it lights up.
#[derive(Clone, Debug, PartialEq)]
pub struct Silhouette {
    pub corners: [[f64; 3]; 8],
    pub channel: usize,
}

impl Silhouette {
    /// `class = None` paints into the occluder channel.
    pub fn new(b: &Box3D, class: Option<ObjectClass>) -> Self {
        let fp = b.footprint();
        let mut corners = [[0.0; 3]; 8];
        for (i, [x, y]) in fp.iter().enumerate() {
            corners[i] = [*x, *y, b.bottom()];
            corners[i + 4] = [*x, *y, b.top()];
        }
        Silhouette {
            corners,
            channel: class.map_or(OCCLUDER_CHANNEL, |c| c.index()),
        }
    }

    fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.corners {
            for k in 0..3 {
                c[k] += p[k] / 8.0;
            }
        }
        c
    }
}

/// Paint silhouettes far to near into a `[6, H, W]` image. Each solid
/// covers the pixel rectangle spanned by its projected corners; nearer
/// solids overwrite farther ones. The depth channel holds `1/depth` of the
/// visible solid with multiplicative Gaussian noise.
pub fn rasterize_silhouettes<R: Rng + ?Sized>(
    cam: &CameraModel,
    solids: &[Silhouette],
    depth_noise: f64,
    rng: &mut R,
) -> Tensor {
    let (h, w) = (cam.height, cam.width);
    let cells = h * w;
    let mut owner: Vec<Option<(usize, f64)>> = vec![None; cells];
    let mut order: Vec<(f64, usize)> = solids
        .iter()
        .enumerate()
        .filter_map(|(i, s)| cam.project(s.center()).map(|(_, _, d)| (d, i)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (depth, i) in order {
        let proj: Vec<(f64, f64)> = solids[i]
            .corners
            .iter()
            .filter_map(|p| cam.project(*p))
            .map(|(u, v, _)| (u, v))
            .collect();
        if proj.is_empty() {
            continue;
        }
        let (u0, u1) = proj
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (v0, v1) = proj
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let c0 = u0.round().max(0.0) as usize;
        let c1 = u1.round().min(w as f64 - 1.0);
        let r0 = v0.round().max(0.0) as usize;
        let r1 = v1.round().min(h as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                owner[r * w + c] = Some((i, depth));
            }
        }
    }
    let mut img = Tensor::zeros(&[SILHOUETTE_CHANNELS, h, w]);
    let data = img.data_mut();
    for (p, o) in owner.iter().enumerate() {
        match o {
            Some((i, depth)) => {
                data[solids[*i].channel * cells + p] = 1.0;
                let n: f64 = StandardNormal.sample(rng);
                data[DEPTH_CHANNEL * cells + p] = (1.0 + depth_noise * n) / depth;
            }
            None => data[FREE_CHANNEL * cells + p] = 1.0,
        }
    }
    img
}

/// Fixed two-layer 3×3 convolution standing in for an image backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct StubEncoder {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl StubEncoder {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = Conv2d::init(SILHOUETTE_CHANNELS, channels, 3, &mut rng);
        let second = Conv2d::init(channels, channels, 3, &mut rng);
        StubEncoder { first, second }
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let hidden = self.first.forward(image)?.map(gelu);
        self.second.forward(&hidden)
    }
}
