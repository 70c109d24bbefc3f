use std::ops::Range;

use crate::error::{Error, Result};

use super::Tensor;

/// Strides of a 2D grid of feature vectors.
///
/// `[C, H, W]` maps use `ch_stride = H·W, cell_stride = 1`; token-major
/// `[H·W, C]` buffers use `ch_stride = 1, cell_stride = C`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub ch_stride: usize,
    pub cell_stride: usize,
}

impl Layout {
    pub fn channel_major(height: usize, width: usize) -> Self {
        Layout {
            height,
            width,
            ch_stride: height * width,
            cell_stride: 1,
        }
    }

    pub fn token_major(height: usize, width: usize, channels: usize) -> Self {
        Layout {
            height,
            width,
            ch_stride: 1,
            cell_stride: channels,
        }
    }

    #[inline]
    fn cell(&self, r: isize, c: isize) -> Option<usize> {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            None
        } else {
            Some((r as usize * self.width + c as usize) * self.cell_stride)
        }
    }
}

/// A bilinear sampling location, split into an integer base cell and
/// fractional weights.
///
/// Cell `(r, c)` is centered at coordinate `(r, c)`. Neighbors outside the
/// grid read as zero. The position is built from an integer reference plus a
/// real offset so that shifting the reference by whole cells shifts the
/// result exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSite {
    pub r0: isize,
    pub c0: isize,
    pub fr: f64,
    pub fc: f64,
}

impl SampleSite {
    #[inline]
    pub fn new(base: (isize, isize), offset: (f64, f64)) -> Self {
        let dr = offset.0.floor();
        let dc = offset.1.floor();
        SampleSite {
            r0: base.0.saturating_add(dr as isize),
            c0: base.1.saturating_add(dc as isize),
            fr: offset.0 - dr,
            fc: offset.1 - dc,
        }
    }

    /// Absolute grid coordinate `p`.
    pub fn at(p: (f64, f64)) -> Self {
        Self::new((0, 0), p)
    }

    #[inline]
    fn corners(&self) -> [(isize, isize, f64); 4] {
        let (fr, fc) = (self.fr, self.fc);
        [
            (self.r0, self.c0, (1.0 - fr) * (1.0 - fc)),
            (self.r0, self.c0.saturating_add(1), (1.0 - fr) * fc),
            (self.r0.saturating_add(1), self.c0, fr * (1.0 - fc)),
            (self.r0.saturating_add(1), self.c0.saturating_add(1), fr * fc),
        ]
    }

    /// `out[k] = sample of channel channels.start + k`.
    #[inline]
    pub fn gather(&self, data: &[f64], layout: &Layout, channels: Range<usize>, out: &mut [f64]) {
        out.fill(0.0);
        for (r, c, w) in self.corners() {
            if let Some(base) = layout.cell(r, c) {
                for (k, ch) in channels.clone().enumerate() {
                    out[k] += w * data[base + ch * layout.ch_stride];
                }
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates `dout` into `dmap`.
    #[inline]
    pub fn scatter(&self, dmap: &mut [f64], layout: &Layout, channels: Range<usize>, dout: &[f64]) {
        for (r, c, w) in self.corners() {
            if let Some(base) = layout.cell(r, c) {
                for (k, ch) in channels.clone().enumerate() {
                    dmap[base + ch * layout.ch_stride] += w * dout[k];
                }
            }
        }
    }

    /// Gradient of `⟨dout, sample⟩` with respect to the sampling position.
    #[inline]
    pub fn position_grad(&self, data: &[f64], layout: &Layout, channels: Range<usize>, dout: &[f64]) -> (f64, f64) {
        let read = |r: isize, c: isize, ch: usize| -> f64 {
            layout.cell(r, c).map_or(0.0, |base| data[base + ch * layout.ch_stride])
        };
        let (r1, c1) = (self.r0.saturating_add(1), self.c0.saturating_add(1));
        let (fr, fc) = (self.fr, self.fc);
        let mut gr = 0.0;
        let mut gc = 0.0;
        for (k, ch) in channels.enumerate() {
            let v00 = read(self.r0, self.c0, ch);
            let v01 = read(self.r0, c1, ch);
            let v10 = read(r1, self.c0, ch);
            let v11 = read(r1, c1, ch);
            gr += dout[k] * ((1.0 - fc) * (v10 - v00) + fc * (v11 - v01));
            gc += dout[k] * ((1.0 - fr) * (v01 - v00) + fr * (v11 - v10));
        }
        (gr, gc)
    }
}

fn map_dims(map: &Tensor) -> Result<(usize, usize, usize)> {
    if map.rank() != 3 {
        return Err(Error::shape(
            "bilinear_sample",
            format!("expected a [C, H, W] map, got {:?}", map.shape()),
        ));
    }
    Ok((map.dim(0), map.dim(1), map.dim(2)))
}

/// Bilinear read of every channel of a `[C, H, W]` map at grid position
/// `p = (row, col)`.
pub fn bilinear_sample(map: &Tensor, p: (f64, f64)) -> Result<Tensor> {
    let (c, h, w) = map_dims(map)?;
    let mut out = vec![0.0; c];
    SampleSite::at(p).gather(map.data(), &Layout::channel_major(h, w), 0..c, &mut out);
    Tensor::new(vec![c], out)
}

/// Gradients of `⟨dout, bilinear_sample(map, p)⟩` with respect to the map
/// values and to `p`.
pub fn bilinear_sample_backward(map: &Tensor, p: (f64, f64), dout: &Tensor) -> Result<(Tensor, (f64, f64))> {
    let (c, h, w) = map_dims(map)?;
    dout.expect_shape("bilinear_sample_backward", &[c])?;
    let site = SampleSite::at(p);
    let layout = Layout::channel_major(h, w);
    let mut dmap = map.zeros_like();
    site.scatter(dmap.data_mut(), &layout, 0..c, dout.data());
    let dp = site.position_grad(map.data(), &layout, 0..c, dout.data());
    Ok((dmap, dp))
}
