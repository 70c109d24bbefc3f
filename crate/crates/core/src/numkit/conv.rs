use crate::error::{Error, Result};

use super::Tensor;

fn dims3(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::shape(op, format!("expected [C, H, W], got {:?}", x.shape())));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2)))
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

fn conv_geom(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvGeom> {
    let (cin, h, w) = dims3("conv2d", x)?;
    if kernel.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be [Cout, Cin, K, K], got {:?}", kernel.shape()),
        ));
    }
    let (cout, kcin, k, k2) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
    if kcin != cin {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: 0,
            expected: kcin,
            got: cin,
        });
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("only odd square kernels are supported, got {k}x{k2}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    bias.expect_shape("conv2d", &[cout])?;
    let pad = k / 2;
    Ok(ConvGeom {
        cin,
        h,
        w,
        cout,
        k,
        pad,
        stride,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (w + 2 * pad - k) / stride + 1,
    })
}

/// 2D cross-correlation with "same" zero padding (`K/2`) and the given stride.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geom(x, kernel, bias, stride)?;
    let (xd, kd) = (x.data(), kernel.data());
    let plane = g.ho * g.wo;
    let mut out = vec![0.0; g.cout * plane];
    for co in 0..g.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias.data()[co]);
        for ci in 0..g.cin {
            let xin = &xd[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = kd[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        let row = &xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                o[oy * g.wo + ox] += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.cout, g.ho, g.wo], out)
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv2d_backward(x: &Tensor, kernel: &Tensor, stride: usize, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let bias = Tensor::zeros(&[kernel.dim(0)]);
    let g = conv_geom(x, kernel, &bias, stride)?;
    dy.expect_shape("conv2d_backward", &[g.cout, g.ho, g.wo])?;
    let (xd, kd, dyd) = (x.data(), kernel.data(), dy.data());
    let plane = g.ho * g.wo;
    let mut dx = x.zeros_like();
    let mut dk = kernel.zeros_like();
    let mut db = bias;
    for co in 0..g.cout {
        let go = &dyd[co * plane..(co + 1) * plane];
        db.data_mut()[co] = go.iter().sum();
        for ci in 0..g.cin {
            let xin = &xd[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                    let wv = kd[widx];
                    let mut acc = 0.0;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                let gv = go[oy * g.wo + ox];
                                acc += gv * xin[iy * g.w + ix as usize];
                                dx.data_mut()[ci * g.h * g.w + iy * g.w + ix as usize] += wv * gv;
                            }
                        }
                    }
                    dk.data_mut()[widx] = acc;
                }
            }
        }
    }
    Ok((dx, dk, db))
}

/// Non-overlapping `factor × factor` average pooling.
pub fn avgpool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = dims3("avgpool", x)?;
    if factor == 0 {
        return Err(Error::shape("avgpool", "factor must be positive"));
    }
    for (axis, n) in [(1, h), (2, w)] {
        if n % factor != 0 {
            return Err(Error::Dimension {
                op: "avgpool",
                axis,
                expected: n.div_ceil(factor) * factor,
                got: n,
            });
        }
    }
    let (ho, wo) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for dy in 0..factor {
                    let row = ch * h * w + (oy * factor + dy) * w + ox * factor;
                    s += x.data()[row..row + factor].iter().sum::<f64>();
                }
                out[ch * ho * wo + oy * wo + ox] = s * inv;
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub fn avgpool2(x: &Tensor) -> Result<Tensor> {
    avgpool(x, 2)
}

pub fn avgpool_backward(input_shape: &[usize], factor: usize, dy: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (ho, wo) = (h / factor, w / factor);
    dy.expect_shape("avgpool_backward", &[c, ho, wo])?;
    let inv = 1.0 / (factor * factor) as f64;
    Ok(Tensor::from_fn(input_shape, |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let xx = i % w;
        dy.data()[ch * ho * wo + (y / factor) * wo + xx / factor] * inv
    }))
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = dims3("upsample_nearest", x)?;
    if factor == 0 {
        return Err(Error::shape("upsample_nearest", "factor must be positive"));
    }
    let (ho, wo) = (h * factor, w * factor);
    Ok(Tensor::from_fn(&[c, ho, wo], |i| {
        let ch = i / (ho * wo);
        let y = (i / wo) % ho;
        let xx = i % wo;
        x.data()[ch * h * w + (y / factor) * w + xx / factor]
    }))
}

pub fn upsample_nearest_backward(dy: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, ho, wo) = dims3("upsample_nearest_backward", dy)?;
    if factor == 0 || ho % factor != 0 || wo % factor != 0 {
        return Err(Error::shape(
            "upsample_nearest_backward",
            "gradient not divisible by factor",
        ));
    }
    let (h, w) = (ho / factor, wo / factor);
    let mut dx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                dx.data_mut()[ch * h * w + (y / factor) * w + xx / factor] += dy.data()[ch * ho * wo + y * wo + xx];
            }
        }
    }
    Ok(dx)
}

/// Stack `[C_i, H, W]` maps along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (_, h, w) = dims3("concat_channels", first)?;
    let mut data = Vec::new();
    let mut channels = 0;
    for p in parts {
        let (c, ph, pw) = dims3("concat_channels", p)?;
        if ph != h {
            return Err(Error::Dimension {
                op: "concat_channels",
                axis: 1,
                expected: h,
                got: ph,
            });
        }
        if pw != w {
            return Err(Error::Dimension {
                op: "concat_channels",
                axis: 2,
                expected: w,
                got: pw,
            });
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Inverse of [`concat_channels`].
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (c, h, w) = dims3("split_channels", x)?;
    let total: usize = sizes.iter().sum();
    if total != c {
        return Err(Error::Dimension {
            op: "split_channels",
            axis: 0,
            expected: total,
            got: c,
        });
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(Tensor::new(
            vec![s, h, w],
            x.data()[start * h * w..(start + s) * h * w].to_vec(),
        )?);
        start += s;
    }
    Ok(out)
}
