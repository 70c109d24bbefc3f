//! Lift step: per-pixel depth distribution times per-pixel context.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{concat_channels, split_channels, Conv2d, ParamSet, Tensor};

/// How depth and context are computed from image features `x`.
///
/// - `Vanilla`: `depth = softmax(DepthNet(x))`, context is `x` itself.
/// - `DepthSupervised`: `y = DepthNet([d, x])` with the rasterized radar
///   depth `d`; the first `D` channels of `y` are depth logits, the rest
///   context.
/// - `DepthContext`: separate `DepthNet(x)` and `ContextNet(x)`; no radar
///   input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LssVariant {
    Vanilla,
    DepthSupervised,
    #[default]
    DepthContext,
}

impl LssVariant {
    pub const ALL: [LssVariant; 3] = [
        LssVariant::DepthSupervised,
        LssVariant::Vanilla,
        LssVariant::DepthContext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LssVariant::Vanilla => "vanilla",
            LssVariant::DepthSupervised => "depth-supervised",
            LssVariant::DepthContext => "depth-context",
        }
    }
}

/// 1×1 convolutions of one variant. `context_net` is present only for
/// [`LssVariant::DepthContext`].
#[derive(Clone, Debug, PartialEq)]
pub struct LssParams {
    pub variant: LssVariant,
    pub bins: usize,
    pub depth_net: Conv2d,
    pub context_net: Option<Conv2d>,
}

impl LssParams {
    /// `channels` image-feature channels in and context channels out.
    pub fn init<R: Rng + ?Sized>(variant: LssVariant, channels: usize, bins: usize, rng: &mut R) -> Result<Self> {
        let (depth_net, context_net) = match variant {
            LssVariant::Vanilla => (Conv2d::init(channels, bins, 1, rng), None),
            LssVariant::DepthSupervised => (Conv2d::init(channels + 1, bins + channels, 1, rng), None),
            LssVariant::DepthContext => (
                Conv2d::init(channels, bins, 1, rng),
                Some(Conv2d::init(channels, channels, 1, rng)),
            ),
        };
        let p = LssParams {
            variant,
            bins,
            depth_net,
            context_net,
        };
        p.validate(channels)?;
        Ok(p)
    }

    /// Random weights and biases for testing.
    pub fn random<R: Rng + ?Sized>(variant: LssVariant, channels: usize, bins: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(variant, channels, bins, rng)?;
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        Ok(p)
    }

    pub fn context_channels(&self) -> usize {
        match self.variant {
            LssVariant::Vanilla => self.depth_net.in_channels(),
            LssVariant::DepthSupervised => self.depth_net.out_channels().saturating_sub(self.bins),
            LssVariant::DepthContext => self.context_net.as_ref().map_or(0, |c| c.out_channels()),
        }
    }

    pub fn validate(&self, in_channels: usize) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("at least one depth bin is required".into()));
        }
        let k = self.depth_net.kernel.dim(2);
        if k != 1 {
            return Err(Error::Config(format!("depth net must be 1x1, got {k}x{k}")));
        }
        let expected_in = match self.variant {
            LssVariant::DepthSupervised => in_channels + 1,
            _ => in_channels,
        };
        if self.depth_net.in_channels() != expected_in {
            return Err(Error::Config(format!(
                "depth net expects {} input channels, configured for {}",
                self.depth_net.in_channels(),
                expected_in
            )));
        }
        match self.variant {
            LssVariant::Vanilla | LssVariant::DepthContext if self.depth_net.out_channels() != self.bins => {
                Err(Error::Config(format!(
                    "depth net has {} outputs for {} bins",
                    self.depth_net.out_channels(),
                    self.bins
                )))
            }
            LssVariant::DepthSupervised if self.depth_net.out_channels() <= self.bins => Err(Error::Config(format!(
                "depth net needs more than {} outputs to leave context channels, got {}",
                self.bins,
                self.depth_net.out_channels()
            ))),
            LssVariant::DepthContext => match &self.context_net {
                Some(c) if c.in_channels() == in_channels => Ok(()),
                Some(c) => Err(Error::Config(format!(
                    "context net expects {} input channels, got {}",
                    c.in_channels(),
                    in_channels
                ))),
                None => Err(Error::Config("depth-context variant needs a context net".into())),
            },
            _ if self.context_net.is_some() => Err(Error::Config(format!(
                "{} variant takes no context net",
                self.variant.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl ParamSet for LssParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.depth_net.tensors();
        if let Some(c) = &self.context_net {
            v.extend(c.tensors());
        }
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.depth_net.tensors_mut();
        if let Some(c) = &mut self.context_net {
            v.extend(c.tensors_mut());
        }
        v
    }
}

/// Lifted features.
#[derive(Clone, Debug, PartialEq)]
pub struct LssOutput {
    /// `[D, H, W]`, sums to one over `D` at every pixel.
    pub depth: Tensor,
    /// `[C, H, W]`.
    pub context: Tensor,
    /// `[C, D, H, W]`, `frustum[c, d, p] = context[c, p] · depth[d, p]`.
    pub frustum: Tensor,
}

#[derive(Clone, Debug)]
pub struct LssGrads {
    pub dx: Tensor,
    /// Gradient to the radar depth map, for the depth-supervised variant.
    pub dradar: Option<Tensor>,
    pub params: LssParams,
}

/// Softmax across the leading axis of a `[D, H, W]` tensor.
fn softmax_bins(logits: &Tensor) -> Tensor {
    let d = logits.dim(0);
    let cells = logits.len() / d.max(1);
    let mut out = logits.clone();
    let data = out.data_mut();
    let mut col = vec![0.0; d];
    for p in 0..cells {
        for k in 0..d {
            col[k] = data[k * cells + p];
        }
        crate::numkit::softmax_in_place(&mut col);
        for k in 0..d {
            data[k * cells + p] = col[k];
        }
    }
    out
}

fn outer(context: &Tensor, depth: &Tensor) -> Tensor {
    let (c, d) = (context.dim(0), depth.dim(0));
    let (h, w) = (depth.dim(1), depth.dim(2));
    let cells = h * w;
    let mut f = Tensor::zeros(&[c, d, h, w]);
    let out = f.data_mut();
    for ch in 0..c {
        let ctx = &context.data()[ch * cells..(ch + 1) * cells];
        for k in 0..d {
            let dep = &depth.data()[k * cells..(k + 1) * cells];
            let o = &mut out[(ch * d + k) * cells..(ch * d + k + 1) * cells];
            for ((o, a), b) in o.iter_mut().zip(ctx).zip(dep) {
                *o = a * b;
            }
        }
    }
    f
}

fn stacked_input(x: &Tensor, radar_depth: Option<&Tensor>) -> Result<Tensor> {
    let d = radar_depth.ok_or_else(|| Error::Argument("depth-supervised lift needs a radar depth map".into()))?;
    d.expect_shape("depth_supervised_lss", &[1, x.dim(1), x.dim(2)])?;
    concat_channels(&[d, x])
}

/// Lift `x: [C, H, W]`. `radar_depth: [1, H, W]` is required by the
/// depth-supervised variant and ignored otherwise.
pub fn lss_forward(params: &LssParams, x: &Tensor, radar_depth: Option<&Tensor>) -> Result<LssOutput> {
    if x.rank() != 3 {
        return Err(Error::shape(
            "lss",
            format!("expected [C, H, W] features, got {:?}", x.shape()),
        ));
    }
    params.validate(x.dim(0))?;
    let (depth, context) = match params.variant {
        LssVariant::Vanilla => (softmax_bins(&params.depth_net.forward(x)?), x.clone()),
        LssVariant::DepthSupervised => {
            let y = params.depth_net.forward(&stacked_input(x, radar_depth)?)?;
            let mut parts = split_channels(&y, &[params.bins, params.context_channels()])?.into_iter();
            let logits = parts.next().expect("two parts");
            (softmax_bins(&logits), parts.next().expect("two parts"))
        }
        LssVariant::DepthContext => {
            let ctx_net = params.context_net.as_ref().expect("validated");
            (softmax_bins(&params.depth_net.forward(x)?), ctx_net.forward(x)?)
        }
    };
    let frustum = outer(&context, &depth);
    frustum.check_finite("lss")?;
    Ok(LssOutput {
        depth,
        context,
        frustum,
    })
}

pub fn vanilla_lss(params: &LssParams, x: &Tensor) -> Result<LssOutput> {
    expect_variant(params, LssVariant::Vanilla)?;
    lss_forward(params, x, None)
}

pub fn depth_supervised_lss(params: &LssParams, x: &Tensor, radar_depth: &Tensor) -> Result<LssOutput> {
    expect_variant(params, LssVariant::DepthSupervised)?;
    lss_forward(params, x, Some(radar_depth))
}

pub fn depth_context_lss(params: &LssParams, x: &Tensor) -> Result<LssOutput> {
    expect_variant(params, LssVariant::DepthContext)?;
    lss_forward(params, x, None)
}

fn expect_variant(params: &LssParams, v: LssVariant) -> Result<()> {
    if params.variant != v {
        return Err(Error::Argument(format!(
            "parameters are for the {} variant, not {}",
            params.variant.name(),
            v.name()
        )));
    }
    Ok(())
}

/// Backward of [`lss_forward`] given its output and `dfrustum: [C, D, H, W]`.
pub fn lss_backward(
    params: &LssParams,
    x: &Tensor,
    radar_depth: Option<&Tensor>,
    out: &LssOutput,
    dfrustum: &Tensor,
) -> Result<LssGrads> {
    dfrustum.expect_shape("lss_backward", out.frustum.shape())?;
    let (c, d) = (out.context.dim(0), out.depth.dim(0));
    let cells = out.depth.len() / d;
    let mut dctx = out.context.zeros_like();
    let mut dlogits = out.depth.zeros_like();
    {
        let g = dfrustum.data();
        let dc = dctx.data_mut();
        let dd = dlogits.data_mut();
        for ch in 0..c {
            let ctx = &out.context.data()[ch * cells..(ch + 1) * cells];
            for k in 0..d {
                let dep = &out.depth.data()[k * cells..(k + 1) * cells];
                let gf = &g[(ch * d + k) * cells..(ch * d + k + 1) * cells];
                for p in 0..cells {
                    dc[ch * cells + p] += gf[p] * dep[p];
                    dd[k * cells + p] += gf[p] * ctx[p];
                }
            }
        }
        // Softmax backward along the bin axis.
        let dep = out.depth.data();
        for p in 0..cells {
            let inner: f64 = (0..d).map(|k| dd[k * cells + p] * dep[k * cells + p]).sum();
            for k in 0..d {
                dd[k * cells + p] = dep[k * cells + p] * (dd[k * cells + p] - inner);
            }
        }
    }
    let mut grads = params.zeroed();
    match params.variant {
        LssVariant::Vanilla => {
            let (mut dx, g) = params.depth_net.backward(x, &dlogits)?;
            dx.add_assign(&dctx)?;
            grads.depth_net = g;
            Ok(LssGrads {
                dx,
                dradar: None,
                params: grads,
            })
        }
        LssVariant::DepthSupervised => {
            let input = stacked_input(x, radar_depth)?;
            let dy = concat_channels(&[&dlogits, &dctx])?;
            let (dinput, g) = params.depth_net.backward(&input, &dy)?;
            grads.depth_net = g;
            let mut parts = split_channels(&dinput, &[1, x.dim(0)])?.into_iter();
            let dradar = parts.next();
            Ok(LssGrads {
                dx: parts.next().expect("two parts"),
                dradar,
                params: grads,
            })
        }
        LssVariant::DepthContext => {
            let ctx_net = params.context_net.as_ref().expect("validated");
            let (mut dx, gd) = params.depth_net.backward(x, &dlogits)?;
            let (dx2, gc) = ctx_net.backward(x, &dctx)?;
            dx.add_assign(&dx2)?;
            grads.depth_net = gd;
            grads.context_net = Some(gc);
            Ok(LssGrads {
                dx,
                dradar: None,
                params: grads,
            })
        }
    }
}
