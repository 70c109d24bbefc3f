//! Two-pass fusion block.
//!
//! Pass 1 queries with modality 0 and attends into modality 1. Pass 2 queries
//! with the pass-1 result and attends back into modality 0. Each pass is a
//! pre-norm Transformer sub-block:
//!
//! ```text
//! y = q + DCA(LN(q), LN(kv))
//! out = y + FFN(LN(y))
//! ```

use rand::Rng;

use crate::error::Result;
use crate::numkit::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear_row, linear_row_backward, map_to_tokens,
    tokens_to_map, LayerNorm, LayerNormCache, Linear, ParamSet, Tensor,
};
use crate::par;

use super::dca::{self, DcaCache, DcaConfig, DcaParams};
use super::feature_map::FeatureMap;

/// Hidden width of the feed-forward layer relative to the channel count.
pub const FFN_EXPANSION: usize = 4;

const ROW_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SubBlockParams {
    pub norm_query: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: DcaParams,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl SubBlockParams {
    pub fn init<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        let c = config.channels;
        Ok(SubBlockParams {
            norm_query: LayerNorm::new(c),
            norm_kv: LayerNorm::new(c),
            attn: DcaParams::init(config, rng)?,
            norm_ffn: LayerNorm::new(c),
            ffn_in: Linear::init(c, FFN_EXPANSION * c, rng),
            ffn_out: Linear::init(FFN_EXPANSION * c, c, rng),
        })
    }

    /// Degenerate attention and a zeroed FFN output layer.
    pub fn degenerate(config: DcaConfig) -> Result<Self> {
        let c = config.channels;
        Ok(SubBlockParams {
            norm_query: LayerNorm::new(c),
            norm_kv: LayerNorm::new(c),
            attn: DcaParams::degenerate(config)?,
            norm_ffn: LayerNorm::new(c),
            ffn_in: Linear::zeros(c, FFN_EXPANSION * c),
            ffn_out: Linear::zeros(FFN_EXPANSION * c, c),
        })
    }

    /// Random parameters for testing; see [`DcaParams::random`].
    pub fn random<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        let c = config.channels;
        let norm = |rng: &mut R| LayerNorm {
            gamma: Tensor::random_uniform(&[c], 0.5, 1.5, rng),
            beta: Tensor::random_uniform(&[c], -0.5, 0.5, rng),
        };
        let norm_query = norm(rng);
        let norm_kv = norm(rng);
        let norm_ffn = norm(rng);
        let mut ffn_in = Linear::init(c, FFN_EXPANSION * c, rng);
        ffn_in.bias = Tensor::random_uniform(&[FFN_EXPANSION * c], -0.5, 0.5, rng);
        let mut ffn_out = Linear::init(FFN_EXPANSION * c, c, rng);
        ffn_out.bias = Tensor::random_uniform(&[c], -0.5, 0.5, rng);
        Ok(SubBlockParams {
            norm_query,
            norm_kv,
            attn: DcaParams::random(config, rng)?,
            norm_ffn,
            ffn_in,
            ffn_out,
        })
    }
}

impl ParamSet for SubBlockParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.norm_query.tensors();
        v.extend(self.norm_kv.tensors());
        v.extend(self.attn.tensors());
        v.extend(self.norm_ffn.tensors());
        v.extend(self.ffn_in.tensors());
        v.extend(self.ffn_out.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.norm_query.tensors_mut();
        v.extend(self.norm_kv.tensors_mut());
        v.extend(self.attn.tensors_mut());
        v.extend(self.norm_ffn.tensors_mut());
        v.extend(self.ffn_in.tensors_mut());
        v.extend(self.ffn_out.tensors_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdcaParams {
    pub first: SubBlockParams,
    pub second: SubBlockParams,
}

impl DdcaParams {
    pub fn init<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        Ok(DdcaParams {
            first: SubBlockParams::init(config, rng)?,
            second: SubBlockParams::init(config, rng)?,
        })
    }

    pub fn degenerate(config: DcaConfig) -> Result<Self> {
        Ok(DdcaParams {
            first: SubBlockParams::degenerate(config)?,
            second: SubBlockParams::degenerate(config)?,
        })
    }

    pub fn random<R: Rng + ?Sized>(config: DcaConfig, rng: &mut R) -> Result<Self> {
        Ok(DdcaParams {
            first: SubBlockParams::random(config, rng)?,
            second: SubBlockParams::random(config, rng)?,
        })
    }

    pub fn config(&self) -> DcaConfig {
        self.first.attn.config
    }
}

impl ParamSet for DdcaParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.first.tensors();
        v.extend(self.second.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.first.tensors_mut();
        v.extend(self.second.tensors_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SubBlockCache {
    ln_query: LayerNormCache,
    ln_kv: LayerNormCache,
    attn: DcaCache,
    ln_ffn: LayerNormCache,
    /// LN(y), the FFN input.
    ffn_input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

fn sub_forward(p: &SubBlockParams, q: &[f64], kv: &[f64], height: usize, width: usize) -> (Vec<f64>, SubBlockCache) {
    let c = p.attn.config.channels;
    let hid = p.ffn_in.out_dim();
    let (a, ln_query) = layer_norm(q, p.norm_query.gamma.data(), p.norm_query.beta.data(), LayerNorm::EPS);
    let (b, ln_kv) = layer_norm(kv, p.norm_kv.gamma.data(), p.norm_kv.beta.data(), LayerNorm::EPS);
    let (d, attn) = dca::forward_tokens(&p.attn, a, b, height, width);
    let y: Vec<f64> = q.iter().zip(&d).map(|(x, y)| x + y).collect();
    let (f, ln_ffn) = layer_norm(&y, p.norm_ffn.gamma.data(), p.norm_ffn.beta.data(), LayerNorm::EPS);
    let tokens = height * width;
    let parts = par::map_chunks(tokens, ROW_CHUNK, |range| {
        let mut pre = vec![0.0; range.len() * hid];
        let mut act = vec![0.0; range.len() * hid];
        let mut out = vec![0.0; range.len() * c];
        for (i, t) in range.enumerate() {
            let hp = &mut pre[i * hid..(i + 1) * hid];
            linear_row(
                &f[t * c..(t + 1) * c],
                p.ffn_in.weight.data(),
                Some(p.ffn_in.bias.data()),
                hp,
            );
            let ha = &mut act[i * hid..(i + 1) * hid];
            for (o, &v) in ha.iter_mut().zip(hp.iter()) {
                *o = gelu(v);
            }
            let o = &mut out[i * c..(i + 1) * c];
            linear_row(ha, p.ffn_out.weight.data(), Some(p.ffn_out.bias.data()), o);
            for (o, &r) in o.iter_mut().zip(&y[t * c..(t + 1) * c]) {
                *o += r;
            }
        }
        (pre, act, out)
    });
    let mut hidden_pre = Vec::with_capacity(tokens * hid);
    let mut hidden = Vec::with_capacity(tokens * hid);
    let mut out = Vec::with_capacity(tokens * c);
    for (a, b, o) in parts {
        hidden_pre.extend(a);
        hidden.extend(b);
        out.extend(o);
    }
    (
        out,
        SubBlockCache {
            ln_query,
            ln_kv,
            attn,
            ln_ffn,
            ffn_input: f,
            hidden_pre,
            hidden,
        },
    )
}

/// Returns `(dq, dkv, grads)`.
fn sub_backward(p: &SubBlockParams, cache: &SubBlockCache, dout: &[f64]) -> (Vec<f64>, Vec<f64>, SubBlockParams) {
    let c = p.attn.config.channels;
    let hid = p.ffn_in.out_dim();
    let tokens = dout.len() / c;
    let mut g = p.zeroed();

    let parts = par::map_chunks(tokens, ROW_CHUNK, |range| {
        let mut df = vec![0.0; range.len() * c];
        let mut gin = p.ffn_in.zeroed();
        let mut gout = p.ffn_out.zeroed();
        let mut dh = vec![0.0; hid];
        for (i, t) in range.enumerate() {
            dh.fill(0.0);
            linear_row_backward(
                &cache.hidden[t * hid..(t + 1) * hid],
                p.ffn_out.weight.data(),
                &dout[t * c..(t + 1) * c],
                Some(&mut dh),
                gout.weight.data_mut(),
                Some(gout.bias.data_mut()),
            );
            for (d, &x) in dh.iter_mut().zip(&cache.hidden_pre[t * hid..(t + 1) * hid]) {
                *d *= gelu_backward(x);
            }
            linear_row_backward(
                &cache.ffn_input[t * c..(t + 1) * c],
                p.ffn_in.weight.data(),
                &dh,
                Some(&mut df[i * c..(i + 1) * c]),
                gin.weight.data_mut(),
                Some(gin.bias.data_mut()),
            );
        }
        (df, gin, gout)
    });
    let mut df = Vec::with_capacity(tokens * c);
    for (d, gin, gout) in parts {
        df.extend(d);
        g.ffn_in.accumulate(&gin);
        g.ffn_out.accumulate(&gout);
    }
    let dy_ln = layer_norm_backward(
        &cache.ln_ffn,
        p.norm_ffn.gamma.data(),
        &df,
        g.norm_ffn.gamma.data_mut(),
        g.norm_ffn.beta.data_mut(),
    );
    let dy: Vec<f64> = dout.iter().zip(&dy_ln).map(|(a, b)| a + b).collect();

    let (da, db, gattn) = dca::backward_tokens(&p.attn, &cache.attn, &dy);
    g.attn = gattn;
    let dq_ln = layer_norm_backward(
        &cache.ln_query,
        p.norm_query.gamma.data(),
        &da,
        g.norm_query.gamma.data_mut(),
        g.norm_query.beta.data_mut(),
    );
    let dkv = layer_norm_backward(
        &cache.ln_kv,
        p.norm_kv.gamma.data(),
        &db,
        g.norm_kv.gamma.data_mut(),
        g.norm_kv.beta.data_mut(),
    );
    let dq = dy.iter().zip(&dq_ln).map(|(a, b)| a + b).collect();
    (dq, dkv, g)
}

#[derive(Clone, Debug)]
pub struct DdcaCache {
    height: usize,
    width: usize,
    first: SubBlockCache,
    second: SubBlockCache,
}

impl DdcaCache {
    /// Attention caches of the two passes.
    pub fn attention(&self) -> [&DcaCache; 2] {
        [&self.first.attn, &self.second.attn]
    }
}

pub(crate) fn forward_tokens(
    p: &DdcaParams,
    mod0: &[f64],
    mod1: &[f64],
    height: usize,
    width: usize,
) -> (Vec<f64>, DdcaCache) {
    let (f, first) = sub_forward(&p.first, mod0, mod1, height, width);
    let (out, second) = sub_forward(&p.second, &f, mod0, height, width);
    (
        out,
        DdcaCache {
            height,
            width,
            first,
            second,
        },
    )
}

/// Returns `(dmod0, dmod1, grads)`.
pub(crate) fn backward_tokens(p: &DdcaParams, cache: &DdcaCache, dout: &[f64]) -> (Vec<f64>, Vec<f64>, DdcaParams) {
    let (df, mut dmod0, second) = sub_backward(&p.second, &cache.second, dout);
    let (d0, dmod1, first) = sub_backward(&p.first, &cache.first, &df);
    for (a, b) in dmod0.iter_mut().zip(&d0) {
        *a += b;
    }
    (dmod0, dmod1, DdcaParams { first, second })
}

pub fn ddca_forward(params: &DdcaParams, mod0: &FeatureMap, mod1: &FeatureMap) -> Result<FeatureMap> {
    Ok(ddca_forward_cached(params, mod0, mod1)?.0)
}

pub fn ddca_forward_cached(
    params: &DdcaParams,
    mod0: &FeatureMap,
    mod1: &FeatureMap,
) -> Result<(FeatureMap, DdcaCache)> {
    dca::check_inputs(&params.first.attn, mod0, mod1, "ddca_forward")?;
    dca::check_inputs(&params.second.attn, mod0, mod1, "ddca_forward")?;
    let (out, cache) = forward_tokens(params, &mod0.tokens(), &mod1.tokens(), mod0.height(), mod0.width());
    Ok((dca::tokens_to_feature(&out, mod0, "ddca_forward")?, cache))
}

/// Gradients with respect to modality 0, modality 1 and the parameters.
pub fn ddca_backward(params: &DdcaParams, cache: &DdcaCache, dout: &Tensor) -> Result<(Tensor, Tensor, DdcaParams)> {
    let c = params.config().channels;
    let shape = [c, cache.height, cache.width];
    dout.expect_shape("ddca_backward", &shape)?;
    let (d0, d1, g) = backward_tokens(params, cache, &map_to_tokens(dout.data(), c));
    Ok((
        Tensor::new(shape.to_vec(), tokens_to_map(&d0, c))?,
        Tensor::new(shape.to_vec(), tokens_to_map(&d1, c))?,
        g,
    ))
}
