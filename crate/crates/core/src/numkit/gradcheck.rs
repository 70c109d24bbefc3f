//! Central finite-difference verification of hand-written backward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;

use super::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// A differentiable operation: a forward map plus its vector-Jacobian
/// product. `backward` recomputes whatever forward state it needs from the
/// inputs.
pub trait DiffOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;
    /// One gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub op: String,
    /// Largest relative error over all inputs.
    pub max_rel_error: f64,
    /// `max_j |analytic_j − numeric_j| / max(‖analytic‖∞, ‖numeric‖∞, 1e-8)`
    /// for each input tensor.
    pub per_input: Vec<f64>,
    pub scalars_checked: usize,
}

/// Compare `op.backward` against central differences of `⟨u, op(x)⟩` for a
/// random upstream gradient `u`.
pub fn gradcheck<R: Rng + ?Sized>(op: &dyn DiffOp, inputs: &[Tensor], rng: &mut R) -> Result<GradcheckReport> {
    let y = op.forward(inputs)?;
    let upstream = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng);
    let analytic = op.backward(inputs, &upstream)?;
    if analytic.len() != inputs.len() {
        return Err(Error::shape(
            "gradcheck",
            format!(
                "{} returned {} gradients for {} inputs",
                op.name(),
                analytic.len(),
                inputs.len()
            ),
        ));
    }
    for (i, (g, x)) in analytic.iter().zip(inputs).enumerate() {
        g.expect_shape("gradcheck", x.shape())?;
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                op: op.name().to_string(),
                input: i,
                index,
            });
        }
    }

    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let chunks = par::map_chunks(x.len(), 16, |range| -> Result<Vec<f64>> {
            let mut work = inputs.to_vec();
            let mut out = Vec::with_capacity(range.len());
            for j in range {
                let orig = work[i].data()[j];
                work[i].data_mut()[j] = orig + FD_STEP;
                let plus = op.forward(&work)?.dot(&upstream);
                work[i].data_mut()[j] = orig - FD_STEP;
                let minus = op.forward(&work)?.dot(&upstream);
                work[i].data_mut()[j] = orig;
                out.push((plus - minus) / (2.0 * FD_STEP));
            }
            Ok(out)
        });
        let mut numeric = Vec::with_capacity(x.len());
        for c in chunks {
            numeric.extend(c?);
        }
        let a = analytic[i].data();
        let scale = a.iter().chain(&numeric).fold(1e-8_f64, |m, v| m.max(v.abs()));
        let err = a.iter().zip(&numeric).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        per_input.push(err / scale);
    }
    Ok(GradcheckReport {
        op: op.name().to_string(),
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        scalars_checked: inputs.iter().map(|t| t.len()).sum(),
    })
}
