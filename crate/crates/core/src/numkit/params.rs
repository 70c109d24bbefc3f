use rand::Rng;

use crate::error::{Error, Result};

use super::{conv2d, conv2d_backward, Tensor};

/// A bundle of learnable tensors. Gradient buffers are values of the same
/// type, so optimizers and checkpoints can walk both in one fixed order.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same structure, all zeros: a fresh gradient buffer.
    fn zeroed(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        g
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    fn scale_all(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.dot(t)).sum()
    }

    fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Overwrite every tensor, checking shapes.
    fn load_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        let mut targets = self.tensors_mut();
        if targets.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, got {}",
                targets.len(),
                values.len()
            )));
        }
        for (t, v) in targets.iter_mut().zip(values) {
            v.expect_shape("load_tensors", t.shape())?;
            t.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}

/// Scaled-uniform init bound for a layer with `fan_in` inputs.
fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Dense layer `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[cin, cout]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn init<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let b = bound(cin);
        Linear {
            weight: Tensor::random_uniform(&[cin, cout], -b, b, rng),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn identity(c: usize) -> Self {
        Linear {
            weight: Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 }),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(1)
    }
}

impl ParamSet for Linear {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stride-1 "same" convolution with `kernel: [Cout, Cin, K, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Conv2d {
            kernel: Tensor::zeros(&[cout, cin, k, k]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn init<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let b = bound(cin * k * k);
        Conv2d {
            kernel: Tensor::random_uniform(&[cout, cin, k, k], -b, b, rng),
            bias: Tensor::zeros(&[cout]),
        }
    }

    /// 1×1 identity on `c` channels.
    pub fn identity(c: usize) -> Self {
        Conv2d {
            kernel: Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 }),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.kernel, &self.bias, 1)
    }

    /// Returns the input gradient and the parameter gradient.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Conv2d)> {
        let (dx, kernel, bias) = conv2d_backward(x, &self.kernel, 1, dy)?;
        Ok((dx, Conv2d { kernel, bias }))
    }
}

impl ParamSet for Conv2d {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.kernel, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

/// Per-token normalization over the channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(c: usize) -> Self {
        LayerNorm {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
        }
    }
}

impl ParamSet for LayerNorm {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
