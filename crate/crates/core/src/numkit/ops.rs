use crate::error::{Error, Result};

use super::Tensor;

/// `out = x·W + b` for one row. `w` is row-major `[x.len(), out.len()]`.
#[inline]
pub fn linear_row(x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    let cout = out.len();
    debug_assert_eq!(w.len(), x.len() * cout);
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cout..(i + 1) * cout];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// Accumulating backward of [`linear_row`]: `dx += W·dy`, `dw += x⊗dy`,
/// `db += dy`.
#[inline]
pub fn linear_row_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    let cout = dy.len();
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            let row = &w[i * cout..(i + 1) * cout];
            *d += row.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut dw[i * cout..(i + 1) * cout];
        for (g, &d) in row.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
    if let Some(db) = db {
        for (g, &d) in db.iter_mut().zip(dy) {
            *g += d;
        }
    }
}

fn linear_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if w.rank() != 2 {
        return Err(Error::shape(
            "linear",
            format!("weight must be rank 2, got {:?}", w.shape()),
        ));
    }
    if x.rank() == 0 {
        return Err(Error::shape("linear", "input has rank 0"));
    }
    let (cin, cout) = (w.dim(0), w.dim(1));
    let last = x.rank() - 1;
    if x.dim(last) != cin {
        return Err(Error::Dimension {
            op: "linear",
            axis: last,
            expected: cin,
            got: x.dim(last),
        });
    }
    b.expect_shape("linear", &[cout])?;
    Ok((x.len() / cin.max(1), cin, cout))
}

/// `y = x·W + b` applied to every trailing vector of `x`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cin, cout) = linear_dims(x, w, b)?;
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        linear_row(
            &x.data()[r * cin..(r + 1) * cin],
            w.data(),
            Some(b.data()),
            &mut out[r * cout..(r + 1) * cout],
        );
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::new(shape, out)
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let b = Tensor::zeros(&[w.dim(1)]);
    let (rows, cin, cout) = linear_dims(x, w, &b)?;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = cout;
    dy.expect_shape("linear_backward", &out_shape)?;
    let mut dx = x.zeros_like();
    let mut dw = w.zeros_like();
    let mut db = b;
    for r in 0..rows {
        linear_row_backward(
            &x.data()[r * cin..(r + 1) * cin],
            w.data(),
            &dy.data()[r * cout..(r + 1) * cout],
            Some(&mut dx.data_mut()[r * cin..(r + 1) * cin]),
            dw.data_mut(),
            Some(db.data_mut()),
        );
    }
    Ok((dx, dw, db))
}

/// Max-subtracted softmax of one slice, in place.
#[inline]
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    let n = match x.shape().last() {
        Some(&n) if n > 0 => n,
        _ => {
            return Err(Error::Dimension {
                op: "softmax_lastdim",
                axis: x.rank().saturating_sub(1),
                expected: 1,
                got: 0,
            })
        }
    };
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(n) {
        softmax_in_place(chunk);
    }
    Ok(out)
}

/// Backward through softmax given its output `y`: `dx = y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    dy.expect_shape("softmax_backward", y.shape())?;
    let n = *y.shape().last().unwrap_or(&0);
    if n == 0 {
        return Err(Error::Dimension {
            op: "softmax_backward",
            axis: y.rank().saturating_sub(1),
            expected: 1,
            got: 0,
        });
    }
    let mut dx = dy.clone();
    for (g, p) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
        let inner: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - inner);
        }
    }
    Ok(dx)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Derivative of [`gelu`].
#[inline]
pub fn gelu_backward(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits. Returns `(loss, dloss/dlogits)`.
pub fn bce_with_logits_mean(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    targets.expect_shape("bce_with_logits_mean", logits.shape())?;
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = logits.zeros_like();
    for ((g, &x), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets.data()) {
        loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        *g = (sigmoid(x) - t) / n;
    }
    Ok((loss / n, grad))
}

/// Saved state of a row-wise layer norm.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalize each row of width `gamma.len()` to zero mean and unit variance,
/// then scale and shift.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, LayerNormCache) {
    let c = gamma.len();
    let rows = x.len() / c;
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for k in 0..c {
            let nrm = (row[k] - mean) * is;
            normalized[r * c + k] = nrm;
            out[r * c + k] = nrm * gamma[k] + beta[k];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Backward of [`layer_norm`]. Accumulates into `dgamma`/`dbeta` and returns
/// the input gradient.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let c = gamma.len();
    let rows = dy.len() / c;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; c];
    for r in 0..rows {
        let xhat = &cache.normalized[r * c..(r + 1) * c];
        let g = &dy[r * c..(r + 1) * c];
        for k in 0..c {
            dgamma[k] += g[k] * xhat[k];
            dbeta[k] += g[k];
            dxhat[k] = g[k] * gamma[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        let is = cache.inv_std[r];
        for k in 0..c {
            dx[r * c + k] = is * (dxhat[k] - mean_d - xhat[k] * mean_dx);
        }
    }
    dx
}

/// `[C, H, W]` → `[H·W, C]`.
pub fn map_to_tokens(map: &[f64], channels: usize) -> Vec<f64> {
    let cells = map.len() / channels.max(1);
    let mut out = vec![0.0; map.len()];
    for ch in 0..channels {
        for cell in 0..cells {
            out[cell * channels + ch] = map[ch * cells + cell];
        }
    }
    out
}

/// `[H·W, C]` → `[C, H, W]`.
pub fn tokens_to_map(tokens: &[f64], channels: usize) -> Vec<f64> {
    let cells = tokens.len() / channels.max(1);
    let mut out = vec![0.0; tokens.len()];
    for cell in 0..cells {
        for ch in 0..channels {
            out[ch * cells + cell] = tokens[cell * channels + ch];
        }
    }
    out
}
