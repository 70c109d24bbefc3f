//! Feature-pyramid fuser: a stack of two-pass blocks at several pooled
//! resolutions, upsampled back and merged by a final 3×3 convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    avgpool, avgpool_backward, concat_channels, map_to_tokens, split_channels, tokens_to_map, upsample_nearest,
    upsample_nearest_backward, Conv2d, ParamSet, Tensor,
};

use super::dca::{self, DcaConfig};
use super::ddca::{self, DdcaCache, DdcaParams};
use super::feature_map::{FeatureMap, Modality};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleSchedule {
    /// Pooling factors 1, 2, 4.
    #[default]
    Dyadic,
    /// Pooling factors 1, 2, 3.
    Linear,
}

impl ScaleSchedule {
    pub fn factors(self, levels: usize) -> Vec<usize> {
        let all: [usize; 3] = match self {
            ScaleSchedule::Dyadic => [1, 2, 4],
            ScaleSchedule::Linear => [1, 2, 3],
        };
        all[..levels.min(3)].to_vec()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMerge {
    #[default]
    Sum,
    Concat,
}

/// Which sensor plays modality 0 (the first query).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionOrder {
    #[default]
    #[serde(rename = "rc")]
    RadarCamera,
    #[serde(rename = "cr")]
    CameraRadar,
}

impl InteractionOrder {
    pub fn name(self) -> &'static str {
        match self {
            InteractionOrder::RadarCamera => "rc",
            InteractionOrder::CameraRadar => "cr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpDdcaConfig {
    pub attention: DcaConfig,
    /// Pyramid depth, 1 to 3. Depth 1 is the plain block stack.
    pub levels: usize,
    /// Two-pass blocks per level.
    pub blocks: usize,
    #[serde(default)]
    pub schedule: ScaleSchedule,
    #[serde(default)]
    pub merge: ScaleMerge,
}

impl FpDdcaConfig {
    pub fn new(attention: DcaConfig, levels: usize) -> Self {
        FpDdcaConfig {
            attention,
            levels,
            blocks: 2,
            schedule: ScaleSchedule::Dyadic,
            merge: ScaleMerge::Sum,
        }
    }

    pub fn factors(&self) -> Vec<usize> {
        self.schedule.factors(self.levels)
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if !(1..=3).contains(&self.levels) {
            return Err(Error::Config(format!(
                "pyramid depth must be 1..=3, got {}",
                self.levels
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one block per pyramid level is required".into()));
        }
        Ok(())
    }

    /// Every pooling factor must divide both grid dimensions.
    pub fn check_grid(&self, height: usize, width: usize) -> Result<()> {
        for f in self.factors() {
            for (axis, n) in [(1, height), (2, width)] {
                if n % f != 0 || n == 0 {
                    let expected = n.div_ceil(f) * f;
                    return Err(Error::Dimension {
                        op: "fp_ddca",
                        axis,
                        expected: expected.max(f),
                        got: n,
                    });
                }
            }
        }
        Ok(())
    }

    fn merged_channels(&self) -> usize {
        match self.merge {
            ScaleMerge::Sum => self.attention.channels,
            ScaleMerge::Concat => self.attention.channels * self.levels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpDdcaParams {
    pub config: FpDdcaConfig,
    pub grid: (usize, usize),
    /// `levels[l][k]` is block `k` at pooling factor `config.factors()[l]`.
    pub levels: Vec<Vec<DdcaParams>>,
    pub fuse: Conv2d,
}

impl FpDdcaParams {
    fn build(
        config: FpDdcaConfig,
        grid: (usize, usize),
        mut block: impl FnMut() -> Result<DdcaParams>,
        fuse: impl FnOnce(usize, usize) -> Conv2d,
    ) -> Result<Self> {
        config.validate()?;
        config.check_grid(grid.0, grid.1)?;
        let mut levels = Vec::with_capacity(config.levels);
        for _ in 0..config.levels {
            levels.push((0..config.blocks).map(|_| block()).collect::<Result<Vec<_>>>()?);
        }
        Ok(FpDdcaParams {
            config,
            grid,
            levels,
            fuse: fuse(config.merged_channels(), config.attention.channels),
        })
    }

    pub fn init<R: Rng + ?Sized>(config: FpDdcaConfig, grid: (usize, usize), rng: &mut R) -> Result<Self> {
        let mut blocks = Vec::new();
        config.validate()?;
        for _ in 0..config.levels * config.blocks {
            blocks.push(DdcaParams::init(config.attention, rng)?);
        }
        let fuse = Conv2d::init(config.merged_channels(), config.attention.channels, 3, rng);
        let mut it = blocks.into_iter();
        Self::build(config, grid, || Ok(it.next().expect("block count")), |_, _| fuse)
    }

    /// Random parameters for testing; see [`super::DcaParams::random`].
    pub fn random<R: Rng + ?Sized>(config: FpDdcaConfig, grid: (usize, usize), rng: &mut R) -> Result<Self> {
        let mut p = Self::init(config, grid, rng)?;
        for level in &mut p.levels {
            for b in level.iter_mut() {
                *b = DdcaParams::random(config.attention, rng)?;
            }
        }
        p.fuse.bias = Tensor::random_uniform(&[config.attention.channels], -0.5, 0.5, rng);
        Ok(p)
    }

    /// Every level uses a copy of `block`; the final conv is `fuse`.
    pub fn uniform(config: FpDdcaConfig, grid: (usize, usize), block: &DdcaParams, fuse: Conv2d) -> Result<Self> {
        Self::build(config, grid, || Ok(block.clone()), |_, _| fuse)
    }
}

impl ParamSet for FpDdcaParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.levels.iter().flatten().flat_map(|b| b.tensors()).collect();
        v.extend(self.fuse.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.levels.iter_mut().flatten().flat_map(|b| b.tensors_mut()).collect();
        v.extend(self.fuse.tensors_mut());
        v
    }
}

#[derive(Clone, Debug)]
struct LevelCache {
    factor: usize,
    height: usize,
    width: usize,
    blocks: Vec<DdcaCache>,
}

#[derive(Clone, Debug)]
pub struct FpDdcaCache {
    order: InteractionOrder,
    levels: Vec<LevelCache>,
    merged: Tensor,
}

impl FpDdcaCache {
    /// Per-level block caches, finest level first.
    pub fn block_caches(&self) -> impl Iterator<Item = &DdcaCache> {
        self.levels.iter().flat_map(|l| l.blocks.iter())
    }
}

fn pool(x: &Tensor, f: usize) -> Result<Tensor> {
    if f == 1 {
        Ok(x.clone())
    } else {
        avgpool(x, f)
    }
}

pub fn fp_ddca_forward(
    params: &FpDdcaParams,
    radar: &FeatureMap,
    camera: &FeatureMap,
    order: InteractionOrder,
) -> Result<FeatureMap> {
    Ok(fp_ddca_forward_cached(params, radar, camera, order)?.0)
}

pub fn fp_ddca_forward_cached(
    params: &FpDdcaParams,
    radar: &FeatureMap,
    camera: &FeatureMap,
    order: InteractionOrder,
) -> Result<(FeatureMap, FpDdcaCache)> {
    let cfg = params.config;
    let c = cfg.attention.channels;
    radar.check_compatible(camera, "fp_ddca_forward")?;
    if (radar.height(), radar.width()) != params.grid {
        return Err(Error::shape(
            "fp_ddca_forward",
            format!(
                "grid {:?} does not match the configured {:?}",
                (radar.height(), radar.width()),
                params.grid
            ),
        ));
    }
    let probe = &params.levels[0][0];
    dca::check_inputs(&probe.first.attn, radar, camera, "fp_ddca_forward")?;
    let (m0, m1) = match order {
        InteractionOrder::RadarCamera => (radar, camera),
        InteractionOrder::CameraRadar => (camera, radar),
    };

    let mut outputs = Vec::with_capacity(cfg.levels);
    let mut levels = Vec::with_capacity(cfg.levels);
    for (blocks, f) in params.levels.iter().zip(cfg.factors()) {
        let p0 = pool(&m0.tensor, f)?;
        let p1 = pool(&m1.tensor, f)?;
        let (h, w) = (p0.dim(1), p0.dim(2));
        let kv = map_to_tokens(p1.data(), c);
        let mut x = map_to_tokens(p0.data(), c);
        let mut caches = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (y, cache) = ddca::forward_tokens(b, &x, &kv, h, w);
            x = y;
            caches.push(cache);
        }
        let small = Tensor::new(vec![c, h, w], tokens_to_map(&x, c))?;
        outputs.push(if f == 1 { small } else { upsample_nearest(&small, f)? });
        levels.push(LevelCache {
            factor: f,
            height: h,
            width: w,
            blocks: caches,
        });
    }
    let merged = match cfg.merge {
        ScaleMerge::Sum => {
            let mut it = outputs.into_iter();
            let mut acc = it.next().expect("at least one level");
            for o in it {
                acc.add_assign(&o)?;
            }
            acc
        }
        ScaleMerge::Concat => concat_channels(&outputs.iter().collect::<Vec<_>>())?,
    };
    let out = params.fuse.forward(&merged)?;
    out.check_finite("fp_ddca_forward")?;
    Ok((
        FeatureMap::new(out, Modality::Fused, radar.resolution)?,
        FpDdcaCache { order, levels, merged },
    ))
}

/// Gradients with respect to the radar map, the camera map and the
/// parameters.
pub fn fp_ddca_backward(
    params: &FpDdcaParams,
    cache: &FpDdcaCache,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, FpDdcaParams)> {
    let cfg = params.config;
    let c = cfg.attention.channels;
    let shape = [c, params.grid.0, params.grid.1];
    dout.expect_shape("fp_ddca_backward", &shape)?;
    let mut grads = params.zeroed();
    let (dmerged, gfuse) = params.fuse.backward(&cache.merged, dout)?;
    grads.fuse = gfuse;
    let dlevels = match cfg.merge {
        ScaleMerge::Sum => vec![dmerged; cfg.levels],
        ScaleMerge::Concat => split_channels(&dmerged, &vec![c; cfg.levels])?,
    };

    let mut dm0 = Tensor::zeros(&shape);
    let mut dm1 = Tensor::zeros(&shape);
    for (l, (level, dup)) in cache.levels.iter().zip(dlevels).enumerate() {
        let f = level.factor;
        let dsmall = if f == 1 {
            dup
        } else {
            upsample_nearest_backward(&dup, f)?
        };
        let mut dx = map_to_tokens(dsmall.data(), c);
        let mut dkv = vec![0.0; dx.len()];
        for (k, block) in params.levels[l].iter().enumerate().rev() {
            let (d0, d1, g) = ddca::backward_tokens(block, &level.blocks[k], &dx);
            grads.levels[l][k] = g;
            for (a, b) in dkv.iter_mut().zip(&d1) {
                *a += b;
            }
            dx = d0;
        }
        let small = [c, level.height, level.width];
        let d0 = Tensor::new(small.to_vec(), tokens_to_map(&dx, c))?;
        let d1 = Tensor::new(small.to_vec(), tokens_to_map(&dkv, c))?;
        if f == 1 {
            dm0.add_assign(&d0)?;
            dm1.add_assign(&d1)?;
        } else {
            dm0.add_assign(&avgpool_backward(&shape, f, &d0)?)?;
            dm1.add_assign(&avgpool_backward(&shape, f, &d1)?)?;
        }
    }
    Ok(match cache.order {
        InteractionOrder::RadarCamera => (dm0, dm1, grads),
        InteractionOrder::CameraRadar => (dm1, dm0, grads),
    })
}
