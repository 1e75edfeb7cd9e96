//! Central finite-difference check of backpropagated gradients.

use alloc::vec::Vec;

use super::{Mlp, Mode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scalar head over the network output used by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `½ Σ (y − target)²`, target laid out like the output batch.
    LeastSquares(Vec<f64>),
    /// `Σ w ⊙ y`.
    Linear(Vec<f64>),
}

impl LossSpec {
    fn value_and_grad(&self, out: &Matrix) -> Result<(f64, Matrix)> {
        let w = match self {
            LossSpec::LeastSquares(t) | LossSpec::Linear(t) => t,
        };
        if w.len() != out.data.len() {
            return Err(Error::Shape("loss head does not match network output".into()));
        }
        let mut grad = out.clone();
        let mut value = 0.0;
        match self {
            LossSpec::LeastSquares(t) => {
                for (g, (y, t)) in grad.data.iter_mut().zip(out.data.iter().zip(t)) {
                    let d = y - t;
                    value += 0.5 * d * d;
                    *g = d;
                }
            }
            LossSpec::Linear(w) => {
                for (g, (y, w)) in grad.data.iter_mut().zip(out.data.iter().zip(w)) {
                    value += w * y;
                    *g = *w;
                }
            }
        }
        Ok((value, grad))
    }
}

const STEP: f64 = 1e-5;

/// Max over parameters of `|analytic − numeric| / max(1e-8, |numeric|)`.
///
/// In train mode every evaluation replays the dropout masks drawn from
/// `seed`, so the check runs against a frozen mask.
pub fn grad_check(params: &Mlp, input: &Matrix, loss: &LossSpec, mode: Mode, seed: u64) -> Result<f64> {
    let eval = |net: &Mlp| -> Result<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        let trace = net.forward_batch(input, mode, &mut rng)?;
        Ok(loss.value_and_grad(trace.output())?.0)
    };
    let mut rng = crate::rng::stream(seed, 0);
    let trace = params.forward_batch(input, mode, &mut rng)?;
    let (_, g_out) = loss.value_and_grad(trace.output())?;
    let (analytic, _) = params.backward(&trace, &g_out)?;

    let analytic: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for ti in 0..params.tensors().len() {
        for i in 0..params.tensors()[ti].len() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + STEP;
            let plus = eval(&probe)?;
            probe.tensors_mut()[ti][i] = orig - STEP;
            let minus = eval(&probe)?;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = (analytic[flat] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
            flat += 1;
        }
    }
    Ok(worst)
}
