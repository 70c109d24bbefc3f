//! Registry of finite-difference checks over every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fuser::{
    dca_backward, dca_forward_cached, ddca_backward, ddca_forward_cached, fp_ddca_backward, fp_ddca_forward_cached,
    DcaConfig, DcaParams, DdcaParams, FeatureMap, FpDdcaConfig, FpDdcaParams, InteractionOrder, Modality,
};
use crate::geomkit::RigidTransform;
use crate::numkit::{
    avgpool, avgpool_backward, bce_with_logits_mean, bilinear_sample, bilinear_sample_backward, conv2d,
    conv2d_backward, gelu, gelu_backward, gradcheck, layer_norm, layer_norm_backward, linear, linear_backward,
    softmax_backward, softmax_lastdim, upsample_nearest, upsample_nearest_backward, Conv2d, DiffOp, LayerNorm,
    ParamSet, Tensor,
};
use crate::viewtrans::{lss_backward, lss_forward, BevGrid, CameraModel, DepthBins, LssParams, LssVariant, SplatPlan};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Random instances per op.
pub const DEFAULT_INSTANCES: usize = 20;

type ForwardFn = dyn Fn(&[Tensor]) -> Result<Tensor> + Send + Sync;
type BackwardFn = dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + Send + Sync;

/// A [`DiffOp`] assembled from two closures.
pub struct FnOp {
    name: String,
    forward: Box<ForwardFn>,
    backward: Box<BackwardFn>,
}

impl FnOp {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(&[Tensor]) -> Result<Tensor> + Send + Sync + 'static,
        backward: impl Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + Send + Sync + 'static,
    ) -> Self {
        FnOp {
            name: name.into(),
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }
}

impl DiffOp for FnOp {
    fn name(&self) -> &str {
        &self.name
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        (self.forward)(inputs)
    }
    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        (self.backward)(inputs, upstream)
    }
}

/// Wraps an op and scales its backward pass, for negative controls.
struct Scaled {
    inner: Box<dyn DiffOp>,
    factor: f64,
}

impl DiffOp for Scaled {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        self.inner.forward(inputs)
    }
    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = self.inner.backward(inputs, upstream)?;
        g.iter_mut().for_each(|t| t.scale(self.factor));
        Ok(g)
    }
}

pub struct Instance {
    pub op: Box<dyn DiffOp>,
    pub inputs: Vec<Tensor>,
}

type Builder = dyn Fn(&mut ChaCha8Rng) -> Result<Instance> + Send + Sync;

/// A named generator of random check instances.
pub struct GradCase {
    pub name: String,
    build: Box<Builder>,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        build: impl Fn(&mut ChaCha8Rng) -> Result<Instance> + Send + Sync + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            build: Box::new(build),
        }
    }

    pub fn instance(&self, rng: &mut ChaCha8Rng) -> Result<Instance> {
        (self.build)(rng)
    }

    /// The same case with every gradient multiplied by `factor`.
    pub fn corrupted(self, factor: f64) -> GradCase {
        let build = self.build;
        GradCase {
            name: self.name,
            build: Box::new(move |rng| {
                let inst = build(rng)?;
                Ok(Instance {
                    op: Box::new(Scaled { inner: inst.op, factor }),
                    inputs: inst.inputs,
                })
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSummary {
    pub op: String,
    pub instances: usize,
    pub scalars_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub schema: u32,
    pub tolerance: f64,
    pub instances: usize,
    pub passed: bool,
    pub warnings: Vec<String>,
    pub ops: Vec<OpSummary>,
}

impl GradSuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &OpSummary> {
        self.ops.iter().filter(|o| !o.passed)
    }
}

/// Check `instances` random draws of every case. Case `i` draws from its
/// own stream of `seed`, so adding cases does not perturb the others.
pub fn run_suite(cases: &[GradCase], instances: usize, seed: u64, tolerance: f64) -> GradSuiteReport {
    let mut warnings = Vec::new();
    if cases.is_empty() {
        log::warn!("gradient suite has no registered ops; passing vacuously");
        warnings.push("no ops registered".to_string());
    }
    let mut ops = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut summary = OpSummary {
            op: case.name.clone(),
            instances: 0,
            scalars_checked: 0,
            max_rel_error: 0.0,
            passed: true,
            error: None,
        };
        for _ in 0..instances {
            let outcome = case
                .instance(&mut rng)
                .and_then(|inst| gradcheck(inst.op.as_ref(), &inst.inputs, &mut rng));
            match outcome {
                Ok(r) => {
                    summary.instances += 1;
                    summary.scalars_checked += r.scalars_checked;
                    summary.max_rel_error = summary.max_rel_error.max(r.max_rel_error);
                }
                Err(e) => {
                    summary.error = Some(e.to_string());
                    break;
                }
            }
        }
        summary.passed = summary.error.is_none() && summary.max_rel_error < tolerance;
        log::info!("gradcheck {}: max rel error {:.3e}", summary.op, summary.max_rel_error);
        ops.push(summary);
    }
    GradSuiteReport {
        schema: 1,
        tolerance,
        instances,
        passed: ops.iter().all(|o| o.passed),
        warnings,
        ops,
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::random_uniform(shape, -1.0, 1.0, rng)
}

fn fmap(t: &Tensor) -> Result<FeatureMap> {
    FeatureMap::new(t.clone(), Modality::Radar, 1.0)
}

fn with_params<P: ParamSet>(template: &P, values: &[Tensor]) -> Result<P> {
    let mut p = template.clone();
    p.load_tensors(values)?;
    Ok(p)
}

fn chain(head: Vec<Tensor>, params: &impl ParamSet) -> Vec<Tensor> {
    let mut v = head;
    v.extend(params.to_tensors());
    v
}

fn linear_case() -> GradCase {
    GradCase::new("linear", |rng| {
        let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
        Ok(Instance {
            op: Box::new(FnOp::new(
                "linear",
                |x| linear(&x[0], &x[1], &x[2]),
                |x, dy| {
                    let (dx, dw, db) = linear_backward(&x[0], &x[1], dy)?;
                    Ok(vec![dx, dw, db])
                },
            )),
            inputs: vec![uniform(&[n, i], rng), uniform(&[i, o], rng), uniform(&[o], rng)],
        })
    })
}

fn softmax_case() -> GradCase {
    GradCase::new("softmax", |rng| {
        let shape = [rng.random_range(1..4), rng.random_range(2..7)];
        Ok(Instance {
            op: Box::new(FnOp::new(
                "softmax",
                |x| softmax_lastdim(&x[0]),
                |x, dy| Ok(vec![softmax_backward(&softmax_lastdim(&x[0])?, dy)?]),
            )),
            inputs: vec![Tensor::random_uniform(&shape, -3.0, 3.0, rng)],
        })
    })
}

fn bilinear_case() -> GradCase {
    GradCase::new("bilinear", |rng| {
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(2..6), rng.random_range(2..6));
        // Keep the sample position off the integer lattice, where the
        // interpolant has kinks. Edges and outside positions are allowed.
        let coord = |n: usize, rng: &mut ChaCha8Rng| rng.random_range(-1..n as i64) as f64 + rng.random_range(0.2..0.8);
        let p = Tensor::new(vec![2], vec![coord(h, rng), coord(w, rng)])?;
        Ok(Instance {
            op: Box::new(FnOp::new(
                "bilinear",
                |x| bilinear_sample(&x[0], (x[1].data()[0], x[1].data()[1])),
                |x, dy| {
                    let (dmap, (dr, dc)) = bilinear_sample_backward(&x[0], (x[1].data()[0], x[1].data()[1]), dy)?;
                    Ok(vec![dmap, Tensor::new(vec![2], vec![dr, dc])?])
                },
            )),
            inputs: vec![uniform(&[c, h, w], rng), p],
        })
    })
}

fn conv_case() -> GradCase {
    GradCase::new("conv2d", |rng| {
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
        let k = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..3);
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
        Ok(Instance {
            op: Box::new(FnOp::new(
                "conv2d",
                move |x| conv2d(&x[0], &x[1], &x[2], stride),
                move |x, dy| {
                    let (dx, dk, db) = conv2d_backward(&x[0], &x[1], stride, dy)?;
                    Ok(vec![dx, dk, db])
                },
            )),
            inputs: vec![
                uniform(&[cin, h, w], rng),
                uniform(&[cout, cin, k, k], rng),
                uniform(&[cout], rng),
            ],
        })
    })
}

fn avgpool_case() -> GradCase {
    GradCase::new("avgpool", |rng| {
        let f = rng.random_range(1..4);
        let shape = [
            rng.random_range(1..4),
            f * rng.random_range(1..4),
            f * rng.random_range(1..4),
        ];
        Ok(Instance {
            op: Box::new(FnOp::new(
                "avgpool",
                move |x| avgpool(&x[0], f),
                move |x, dy| Ok(vec![avgpool_backward(x[0].shape(), f, dy)?]),
            )),
            inputs: vec![uniform(&shape, rng)],
        })
    })
}

fn upsample_case() -> GradCase {
    GradCase::new("upsample", |rng| {
        let f = rng.random_range(1..4);
        let shape = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)];
        Ok(Instance {
            op: Box::new(FnOp::new(
                "upsample",
                move |x| upsample_nearest(&x[0], f),
                move |_, dy| Ok(vec![upsample_nearest_backward(dy, f)?]),
            )),
            inputs: vec![uniform(&shape, rng)],
        })
    })
}

fn layer_norm_case() -> GradCase {
    GradCase::new("layer_norm", |rng| {
        let (rows, c) = (rng.random_range(1..4), rng.random_range(3..6));
        Ok(Instance {
            op: Box::new(FnOp::new(
                "layer_norm",
                |x| {
                    let (y, _) = layer_norm(x[0].data(), x[1].data(), x[2].data(), LayerNorm::EPS);
                    Tensor::new(x[0].shape().to_vec(), y)
                },
                |x, dy| {
                    let (_, cache) = layer_norm(x[0].data(), x[1].data(), x[2].data(), LayerNorm::EPS);
                    let mut dg = x[1].zeros_like();
                    let mut db = x[2].zeros_like();
                    let dx = layer_norm_backward(&cache, x[1].data(), dy.data(), dg.data_mut(), db.data_mut());
                    Ok(vec![Tensor::new(x[0].shape().to_vec(), dx)?, dg, db])
                },
            )),
            inputs: vec![
                Tensor::random_uniform(&[rows, c], -2.0, 2.0, rng),
                Tensor::random_uniform(&[c], 0.5, 1.5, rng),
                uniform(&[c], rng),
            ],
        })
    })
}

fn gelu_case() -> GradCase {
    GradCase::new("gelu", |rng| {
        let n = rng.random_range(1..12);
        Ok(Instance {
            op: Box::new(FnOp::new(
                "gelu",
                |x| Ok(x[0].map(gelu)),
                |x, dy| {
                    let mut d = x[0].map(gelu_backward);
                    d.data_mut().iter_mut().zip(dy.data()).for_each(|(a, b)| *a *= b);
                    Ok(vec![d])
                },
            )),
            inputs: vec![Tensor::random_uniform(&[n], -3.0, 3.0, rng)],
        })
    })
}

/// At least three channels and two points. Layer norm over two channels is
/// a sign function, and with a single point the attention weight is the
/// constant 1; either way the query gradient all but vanishes and sinks
/// below the finite-difference noise floor.
fn tiny_attention(rng: &mut ChaCha8Rng) -> Result<DcaConfig> {
    let heads = rng.random_range(1..3);
    let head_dim = if heads == 1 { rng.random_range(3..5) } else { 2 };
    DcaConfig::new(heads * head_dim, heads, rng.random_range(2..4))
}

fn dca_case() -> GradCase {
    GradCase::new("dca", |rng| {
        let cfg = tiny_attention(rng)?;
        let p = DcaParams::random(cfg, rng)?;
        let (h, w) = (rng.random_range(2..5), rng.random_range(2..5));
        let c = cfg.channels;
        let inputs = chain(vec![uniform(&[c, h, w], rng), uniform(&[c, h, w], rng)], &p);
        let (pf, pb) = (p.clone(), p);
        Ok(Instance {
            op: Box::new(FnOp::new(
                "dca",
                move |x| {
                    let p = with_params(&pf, &x[2..])?;
                    Ok(dca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?)?.0.tensor)
                },
                move |x, dy| {
                    let p = with_params(&pb, &x[2..])?;
                    let (_, cache) = dca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?)?;
                    let (dq, dkv, g) = dca_backward(&p, &cache, dy)?;
                    Ok(chain(vec![dq, dkv], &g))
                },
            )),
            inputs,
        })
    })
}

fn ddca_case() -> GradCase {
    GradCase::new("ddca", |rng| {
        let cfg = tiny_attention(rng)?;
        let p = DdcaParams::random(cfg, rng)?;
        let (h, w) = (rng.random_range(2..4), rng.random_range(2..4));
        let c = cfg.channels;
        let inputs = chain(vec![uniform(&[c, h, w], rng), uniform(&[c, h, w], rng)], &p);
        let (pf, pb) = (p.clone(), p);
        Ok(Instance {
            op: Box::new(FnOp::new(
                "ddca",
                move |x| {
                    let p = with_params(&pf, &x[2..])?;
                    Ok(ddca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?)?.0.tensor)
                },
                move |x, dy| {
                    let p = with_params(&pb, &x[2..])?;
                    let (_, cache) = ddca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?)?;
                    let (d0, d1, g) = ddca_backward(&p, &cache, dy)?;
                    Ok(chain(vec![d0, d1], &g))
                },
            )),
            inputs,
        })
    })
}

/// 8×8 keeps the coarsest level at 2×2; on a 1×1 map nearly every sample
/// reads padding and some parameter gradients shrink below the
/// finite-difference noise floor.
fn tiny_pyramid(rng: &mut ChaCha8Rng) -> Result<(FpDdcaParams, InteractionOrder)> {
    let mut cfg = FpDdcaConfig::new(tiny_attention(rng)?, rng.random_range(1..4));
    cfg.blocks = rng.random_range(1..3);
    let p = FpDdcaParams::random(cfg, (8, 8), rng)?;
    let order = if rng.random_bool(0.5) {
        InteractionOrder::RadarCamera
    } else {
        InteractionOrder::CameraRadar
    };
    Ok((p, order))
}

fn fp_ddca_case() -> GradCase {
    GradCase::new("fp_ddca", |rng| {
        let (p, order) = tiny_pyramid(rng)?;
        let c = p.config.attention.channels;
        let inputs = chain(vec![uniform(&[c, 8, 8], rng), uniform(&[c, 8, 8], rng)], &p);
        let (pf, pb) = (p.clone(), p);
        Ok(Instance {
            op: Box::new(FnOp::new(
                "fp_ddca",
                move |x| {
                    let p = with_params(&pf, &x[2..])?;
                    Ok(fp_ddca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?, order)?
                        .0
                        .tensor)
                },
                move |x, dy| {
                    let p = with_params(&pb, &x[2..])?;
                    let (_, cache) = fp_ddca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?, order)?;
                    let (dr, dc, g) = fp_ddca_backward(&p, &cache, dy)?;
                    Ok(chain(vec![dr, dc], &g))
                },
            )),
            inputs,
        })
    })
}

/// 2×4 image, three depth bins and a 4×4 grid that catches most of the
/// frustum.
pub fn tiny_camera() -> (CameraModel, DepthBins, BevGrid) {
    let cam = CameraModel {
        fx: 2.0,
        fy: 2.0,
        cx: 1.5,
        cy: 0.5,
        extrinsic: RigidTransform {
            rotation: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            ..RigidTransform::identity()
        },
        height: 2,
        width: 4,
    };
    let bins = DepthBins {
        count: 3,
        min: 1.0,
        max: 4.0,
    };
    let grid = BevGrid {
        rows: 4,
        cols: 4,
        resolution: 1.0,
        x_min: 0.0,
        y_min: -2.0,
    };
    (cam, bins, grid)
}

fn lss_case(variant: LssVariant) -> GradCase {
    let name = format!("lss_{}", variant.name().replace('-', "_"));
    GradCase::new(name.clone(), move |rng| {
        let (cam, bins, grid) = tiny_camera();
        let plan = SplatPlan::new(&cam, &bins, grid)?;
        let c = rng.random_range(1..4);
        let p = LssParams::random(variant, c, bins.count, rng)?;
        let supervised = variant == LssVariant::DepthSupervised;
        let mut head = vec![uniform(&[c, cam.height, cam.width], rng)];
        if supervised {
            head.push(Tensor::random_uniform(&[1, cam.height, cam.width], 0.0, 4.0, rng));
        }
        let split = head.len();
        let inputs = chain(head, &p);
        let (pf, pb, plan_b) = (p.clone(), p, plan.clone());
        Ok(Instance {
            op: Box::new(FnOp::new(
                name.clone(),
                move |x| {
                    let p = with_params(&pf, &x[split..])?;
                    let out = lss_forward(&p, &x[0], supervised.then(|| &x[1]))?;
                    plan.splat(&out.frustum)
                },
                move |x, dy| {
                    let p = with_params(&pb, &x[split..])?;
                    let d = supervised.then(|| &x[1]);
                    let out = lss_forward(&p, &x[0], d)?;
                    let g = lss_backward(&p, &x[0], d, &out, &plan_b.backward(dy)?)?;
                    let mut head = vec![g.dx];
                    if supervised {
                        head.push(g.dradar.expect("supervised lift returns a depth gradient"));
                    }
                    Ok(chain(head, &g.params))
                },
            )),
            inputs,
        })
    })
}

fn splat_case() -> GradCase {
    GradCase::new("splat", |rng| {
        let (cam, bins, grid) = tiny_camera();
        let plan = SplatPlan::new(&cam, &bins, grid)?;
        let c = rng.random_range(1..4);
        let plan_b = plan.clone();
        Ok(Instance {
            op: Box::new(FnOp::new(
                "splat",
                move |x| plan.splat(&x[0]),
                move |_, dy| Ok(vec![plan_b.backward(dy)?]),
            )),
            inputs: vec![uniform(&[c, bins.count, cam.height, cam.width], rng)],
        })
    })
}

/// Occupancy BCE through a 1×1 head on top of the pyramid fuser.
fn toy_head_case() -> GradCase {
    GradCase::new("toy_head", |rng| {
        let (p, order) = tiny_pyramid(rng)?;
        let c = p.config.attention.channels;
        let head = Conv2d::init(c, 3, 1, rng);
        let targets = Tensor::from_fn(&[3, 8, 8], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let inputs = chain(vec![uniform(&[c, 8, 8], rng), uniform(&[c, 8, 8], rng)], &head);
        let (pf, tf) = (p.clone(), targets.clone());
        let (hf, hb) = (head.clone(), head);
        Ok(Instance {
            op: Box::new(FnOp::new(
                "toy_head",
                move |x| {
                    let head = with_params(&hf, &x[2..])?;
                    let fused = fp_ddca_forward_cached(&pf, &fmap(&x[0])?, &fmap(&x[1])?, order)?.0;
                    Ok(Tensor::scalar(
                        bce_with_logits_mean(&head.forward(&fused.tensor)?, &tf)?.0,
                    ))
                },
                move |x, dy| {
                    let head = with_params(&hb, &x[2..])?;
                    let (fused, cache) = fp_ddca_forward_cached(&p, &fmap(&x[0])?, &fmap(&x[1])?, order)?;
                    let (_, mut dlogits) = bce_with_logits_mean(&head.forward(&fused.tensor)?, &targets)?;
                    dlogits.scale(dy.data()[0]);
                    let (dfused, dhead) = head.backward(&fused.tensor, &dlogits)?;
                    let (dr, dc, _) = fp_ddca_backward(&p, &cache, &dfused)?;
                    Ok(chain(vec![dr, dc], &dhead))
                },
            )),
            inputs,
        })
    })
}

/// Every differentiable op of the crate.
pub fn default_registry() -> Vec<GradCase> {
    let mut cases = vec![
        linear_case(),
        softmax_case(),
        bilinear_case(),
        conv_case(),
        avgpool_case(),
        upsample_case(),
        layer_norm_case(),
        gelu_case(),
        dca_case(),
        ddca_case(),
        fp_ddca_case(),
    ];
    cases.extend(LssVariant::ALL.into_iter().map(lss_case));
    cases.push(splat_case());
    cases.push(toy_head_case());
    cases
}
