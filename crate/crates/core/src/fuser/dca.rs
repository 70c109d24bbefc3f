//! Deformable cross attention.
//!
//! Each query cell `q` of one map predicts, per head `h`, `N` sampling
//! offsets `Δp` and `N` attention logits from its own feature. The head
//! output is the attention-weighted sum of the projected other-modality map
//! read bilinearly at `p_q + Δp`; heads are concatenated and mixed by `W^O`.
//!
//! Internally the value projection runs before sampling. Both are linear and
//! the projection has no bias, so projecting the samples or sampling the
//! projection give the same result, and the latter is `N` times cheaper.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{linear_row, linear_row_backward, tokens_to_map, Layout, Linear, ParamSet, SampleSite, Tensor};
use crate::par;

use super::feature_map::{FeatureMap, Modality};

pub const FULL_SCALE_HEADS: usize = 8;
pub const FULL_SCALE_POINTS: usize = 32;

/// Queries handled per parallel work item.
const QUERY_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcaConfig {
    pub channels: usize,
    pub heads: usize,
    pub points: usize,
}

impl DcaConfig {
    pub fn new(channels: usize, heads: usize, points: usize) -> Result<Self> {
        let c = DcaConfig {
            channels,
            heads,
            points,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.points == 0 {
            return Err(Error::Config(format!(
                "channels, heads and points must be positive (got {}, {}, {})",
                self.channels, self.heads, self.points
            )));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} channels are not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Width of the offset net output, `2·H·N`.
    pub fn offset_width(&self) -> usize {
        2 * self.heads * self.points
    }

    /// Width of the attention-logit net output, `H·N`.
    pub fn weight_width(&self) -> usize {
        self.heads * self.points
    }
}

/// Learnable tensors of one attention layer.
///
/// `offset` output index `(h·N + n)·2 + k` holds the row (`k = 0`) or column
/// (`k = 1`) offset of point `n` of head `h`, in grid cells. `value` is
/// `[C, C]`; columns `h·d..(h+1)·d` are the projection of head `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DcaParams {
    pub config: DcaConfig,
    pub offset: Linear,
    pub attention: Linear,
    pub value: Tensor,
    pub output: Linear,
}

impl DcaParams {
    /// Zero offset and attention nets, scaled-uniform projections.
    pub fn init<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        Ok(DcaParams {
            config,
            offset: Linear::zeros(c, config.offset_width()),
            attention: Linear::zeros(c, config.weight_width()),
            value: Linear::init(c, c, rng).weight,
            output: Linear::init(c, c, rng),
        })
    }

    /// Zero nets and identity projections: the layer reads the other map at
    /// the query cell.
    pub fn degenerate(config: DcaConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        Ok(DcaParams {
            config,
            offset: Linear::zeros(c, config.offset_width()),
            attention: Linear::zeros(c, config.weight_width()),
            value: Linear::identity(c).weight,
            output: Linear::identity(c),
        })
    }

    /// Dense random parameters for testing.
    ///
    /// The offset net has tiny weights and biases of the form `k + f` with
    /// integer `k ∈ {-1, 0, 1}` and `f ∈ [0.3, 0.7]`, so every sampling
    /// position keeps a fractional part well inside a cell and finite
    /// differences never straddle a bilinear kink.
    pub fn random<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let s = 1.0 / (c as f64).sqrt();
        let ow = config.offset_width();
        let offset = Linear {
            weight: Tensor::random_uniform(&[c, ow], -1e-3, 1e-3, rng),
            bias: Tensor::from_fn(&[ow], |_| {
                rng.random_range(-1i32..=1) as f64 + rng.random_range(0.3..0.7)
            }),
        };
        Ok(DcaParams {
            config,
            offset,
            attention: Linear {
                weight: Tensor::random_uniform(&[c, config.weight_width()], -1.0, 1.0, rng),
                bias: Tensor::random_uniform(&[config.weight_width()], -0.5, 0.5, rng),
            },
            value: Tensor::random_uniform(&[c, c], -s, s, rng),
            output: Linear {
                weight: Tensor::random_uniform(&[c, c], -s, s, rng),
                bias: Tensor::random_uniform(&[c], -0.5, 0.5, rng),
            },
        })
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        let c = self.config.channels;
        self.offset
            .weight
            .expect_shape("dca", &[c, self.config.offset_width()])?;
        self.offset.bias.expect_shape("dca", &[self.config.offset_width()])?;
        self.attention
            .weight
            .expect_shape("dca", &[c, self.config.weight_width()])?;
        self.attention.bias.expect_shape("dca", &[self.config.weight_width()])?;
        self.value.expect_shape("dca", &[c, c])?;
        self.output.weight.expect_shape("dca", &[c, c])?;
        self.output.bias.expect_shape("dca", &[c])
    }
}

impl ParamSet for DcaParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.offset.weight,
            &self.offset.bias,
            &self.attention.weight,
            &self.attention.bias,
            &self.value,
            &self.output.weight,
            &self.output.bias,
        ]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.offset.weight,
            &mut self.offset.bias,
            &mut self.attention.weight,
            &mut self.attention.bias,
            &mut self.value,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

/// Forward state kept for the backward pass. Buffers are token-major.
#[derive(Clone, Debug)]
pub struct DcaCache {
    height: usize,
    width: usize,
    query: Vec<f64>,
    kv: Vec<f64>,
    values: Vec<f64>,
    /// `[Q, H·N]` softmaxed weights.
    attention: Vec<f64>,
    sites: Vec<SampleSite>,
    /// `[Q, H·N, head_dim]` sampled projected values.
    samples: Vec<f64>,
    /// `[Q, C]` concatenated head outputs.
    heads: Vec<f64>,
}

impl DcaCache {
    /// Attention weights as `[H·W, H·N]`; each run of `N` sums to one.
    pub fn attention_weights(&self) -> &[f64] {
        &self.attention
    }

    /// Absolute sampling positions `(row, col)` in grid units, `[H·W, H·N]`.
    pub fn sample_positions(&self) -> Vec<(f64, f64)> {
        self.sites
            .iter()
            .map(|s| (s.r0 as f64 + s.fr, s.c0 as f64 + s.fc))
            .collect()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Project every kv token through `value` (no bias).
fn project_values(value: &Tensor, kv: &[f64], c: usize) -> Vec<f64> {
    let tokens = kv.len() / c;
    par::map_chunks(tokens, 256, |range| {
        let mut out = vec![0.0; range.len() * c];
        for (i, t) in range.enumerate() {
            linear_row(
                &kv[t * c..(t + 1) * c],
                value.data(),
                None,
                &mut out[i * c..(i + 1) * c],
            );
        }
        out
    })
    .concat()
}

/// Token-level forward on an `height × width` grid.
pub(crate) fn forward_tokens(
    params: &DcaParams,
    query: Vec<f64>,
    kv: Vec<f64>,
    height: usize,
    width: usize,
) -> (Vec<f64>, DcaCache) {
    let cfg = params.config;
    let (c, hn, n, hd) = (cfg.channels, cfg.weight_width(), cfg.points, cfg.head_dim());
    let tokens = height * width;
    let values = project_values(&params.value, &kv, c);
    let layout = Layout::token_major(height, width, c);

    struct Part {
        out: Vec<f64>,
        attention: Vec<f64>,
        sites: Vec<SampleSite>,
        samples: Vec<f64>,
        heads: Vec<f64>,
    }
    let parts = par::map_chunks(tokens, QUERY_CHUNK, |range| {
        let len = range.len();
        let mut p = Part {
            out: vec![0.0; len * c],
            attention: vec![0.0; len * hn],
            sites: Vec::with_capacity(len * hn),
            samples: vec![0.0; len * hn * hd],
            heads: vec![0.0; len * c],
        };
        let mut off = vec![0.0; 2 * hn];
        for (i, q) in range.enumerate() {
            let z = &query[q * c..(q + 1) * c];
            let base = ((q / width) as isize, (q % width) as isize);
            linear_row(
                z,
                params.offset.weight.data(),
                Some(params.offset.bias.data()),
                &mut off,
            );
            let a = &mut p.attention[i * hn..(i + 1) * hn];
            linear_row(z, params.attention.weight.data(), Some(params.attention.bias.data()), a);
            for head in a.chunks_mut(n) {
                crate::numkit::softmax_in_place(head);
            }
            let heads = &mut p.heads[i * c..(i + 1) * c];
            for k in 0..hn {
                let h = k / n;
                let site = SampleSite::new(base, (off[2 * k], off[2 * k + 1]));
                let s = &mut p.samples[(i * hn + k) * hd..(i * hn + k + 1) * hd];
                site.gather(&values, &layout, h * hd..(h + 1) * hd, s);
                let w = p.attention[i * hn + k];
                for (o, v) in heads[h * hd..(h + 1) * hd].iter_mut().zip(s.iter()) {
                    *o += w * v;
                }
                p.sites.push(site);
            }
            linear_row(
                heads,
                params.output.weight.data(),
                Some(params.output.bias.data()),
                &mut p.out[i * c..(i + 1) * c],
            );
        }
        p
    });

    let mut out = Vec::with_capacity(tokens * c);
    let mut cache = DcaCache {
        height,
        width,
        query,
        kv,
        values,
        attention: Vec::with_capacity(tokens * hn),
        sites: Vec::with_capacity(tokens * hn),
        samples: Vec::with_capacity(tokens * hn * hd),
        heads: Vec::with_capacity(tokens * c),
    };
    for p in parts {
        out.extend(p.out);
        cache.attention.extend(p.attention);
        cache.sites.extend(p.sites);
        cache.samples.extend(p.samples);
        cache.heads.extend(p.heads);
    }
    (out, cache)
}

/// Token-level backward. Returns `(dquery, dkv, parameter gradients)`.
pub(crate) fn backward_tokens(params: &DcaParams, cache: &DcaCache, dout: &[f64]) -> (Vec<f64>, Vec<f64>, DcaParams) {
    let cfg = params.config;
    let (c, hn, n, hd) = (cfg.channels, cfg.weight_width(), cfg.points, cfg.head_dim());
    let tokens = cache.height * cache.width;
    let layout = Layout::token_major(cache.height, cache.width, c);

    struct Part {
        dquery: Vec<f64>,
        dvalues: Vec<f64>,
        grads: DcaParams,
    }
    let parts = par::map_chunks(tokens, QUERY_CHUNK, |range| {
        let mut p = Part {
            dquery: vec![0.0; range.len() * c],
            dvalues: vec![0.0; tokens * c],
            grads: params.zeroed(),
        };
        let mut dheads = vec![0.0; c];
        let mut doff = vec![0.0; 2 * hn];
        let mut dlogits = vec![0.0; hn];
        let mut dsample = vec![0.0; hd];
        for (i, q) in range.enumerate() {
            let dy = &dout[q * c..(q + 1) * c];
            dheads.fill(0.0);
            linear_row_backward(
                &cache.heads[q * c..(q + 1) * c],
                params.output.weight.data(),
                dy,
                Some(&mut dheads),
                p.grads.output.weight.data_mut(),
                Some(p.grads.output.bias.data_mut()),
            );
            let attn = &cache.attention[q * hn..(q + 1) * hn];
            for k in 0..hn {
                let h = k / n;
                let dh = &dheads[h * hd..(h + 1) * hd];
                let s = &cache.samples[(q * hn + k) * hd..(q * hn + k + 1) * hd];
                dlogits[k] = dh.iter().zip(s).map(|(a, b)| a * b).sum();
                for (d, g) in dsample.iter_mut().zip(dh) {
                    *d = attn[k] * g;
                }
                let site = &cache.sites[q * hn + k];
                let ch = h * hd..(h + 1) * hd;
                site.scatter(&mut p.dvalues, &layout, ch.clone(), &dsample);
                let (gr, gc) = site.position_grad(&cache.values, &layout, ch, &dsample);
                doff[2 * k] = gr;
                doff[2 * k + 1] = gc;
            }
            for (g, y) in dlogits.chunks_mut(n).zip(attn.chunks(n)) {
                let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                for (gi, yi) in g.iter_mut().zip(y) {
                    *gi = yi * (*gi - inner);
                }
            }
            let z = &cache.query[q * c..(q + 1) * c];
            let dz = &mut p.dquery[i * c..(i + 1) * c];
            linear_row_backward(
                z,
                params.offset.weight.data(),
                &doff,
                Some(&mut *dz),
                p.grads.offset.weight.data_mut(),
                Some(p.grads.offset.bias.data_mut()),
            );
            linear_row_backward(
                z,
                params.attention.weight.data(),
                &dlogits,
                Some(dz),
                p.grads.attention.weight.data_mut(),
                Some(p.grads.attention.bias.data_mut()),
            );
        }
        p
    });

    let mut dquery = Vec::with_capacity(tokens * c);
    let mut dvalues = vec![0.0; tokens * c];
    let mut grads = params.zeroed();
    for p in parts {
        dquery.extend(p.dquery);
        for (a, b) in dvalues.iter_mut().zip(&p.dvalues) {
            *a += b;
        }
        grads.accumulate(&p.grads);
    }

    let kv_parts = par::map_chunks(tokens, 256, |range| {
        let mut dkv = vec![0.0; range.len() * c];
        let mut dw = vec![0.0; c * c];
        for (i, t) in range.enumerate() {
            linear_row_backward(
                &cache.kv[t * c..(t + 1) * c],
                params.value.data(),
                &dvalues[t * c..(t + 1) * c],
                Some(&mut dkv[i * c..(i + 1) * c]),
                &mut dw,
                None,
            );
        }
        (dkv, dw)
    });
    let mut dkv = Vec::with_capacity(tokens * c);
    for (part, dw) in kv_parts {
        dkv.extend(part);
        for (a, b) in grads.value.data_mut().iter_mut().zip(&dw) {
            *a += b;
        }
    }
    (dquery, dkv, grads)
}

pub(crate) fn check_inputs(params: &DcaParams, query: &FeatureMap, kv: &FeatureMap, op: &'static str) -> Result<()> {
    params.check()?;
    query.check_compatible(kv, op)?;
    if query.channels() != params.config.channels {
        return Err(Error::Dimension {
            op,
            axis: 0,
            expected: params.config.channels,
            got: query.channels(),
        });
    }
    Ok(())
}

pub(crate) fn tokens_to_feature(tokens: &[f64], like: &FeatureMap, op: &'static str) -> Result<FeatureMap> {
    let t = Tensor::new(like.tensor.shape().to_vec(), tokens_to_map(tokens, like.channels()))?;
    t.check_finite(op)?;
    FeatureMap::new(t, Modality::Fused, like.resolution)
}

pub fn dca_forward(params: &DcaParams, query: &FeatureMap, kv: &FeatureMap) -> Result<FeatureMap> {
    Ok(dca_forward_cached(params, query, kv)?.0)
}

pub fn dca_forward_cached(params: &DcaParams, query: &FeatureMap, kv: &FeatureMap) -> Result<(FeatureMap, DcaCache)> {
    check_inputs(params, query, kv, "dca_forward")?;
    let (out, cache) = forward_tokens(params, query.tokens(), kv.tokens(), query.height(), query.width());
    Ok((tokens_to_feature(&out, query, "dca_forward")?, cache))
}

/// Gradients with respect to the query map, the kv map and the parameters,
/// given the upstream gradient `dout: [C, H, W]`.
pub fn dca_backward(params: &DcaParams, cache: &DcaCache, dout: &Tensor) -> Result<(Tensor, Tensor, DcaParams)> {
    let c = params.config.channels;
    let shape = [c, cache.height, cache.width];
    dout.expect_shape("dca_backward", &shape)?;
    let dtok = crate::numkit::map_to_tokens(dout.data(), c);
    let (dq, dkv, grads) = backward_tokens(params, cache, &dtok);
    Ok((
        Tensor::new(shape.to_vec(), tokens_to_map(&dq, c))?,
        Tensor::new(shape.to_vec(), tokens_to_map(&dkv, c))?,
        grads,
    ))
}
