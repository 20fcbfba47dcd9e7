//! The noise predictor `eps_theta(x_t, t)`.
//!
//! [`Denoiser`] is the evaluation contract used by the samplers.
//! [`Trainable`] adds the flat parameter vector and an exact L1 loss gradient.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use mlp::{time_embedding, MlpConfig, ReferenceMlp};
pub use optim::{Adam, AdamConfig};

use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// A noise predictor. Evaluation is read-only and deterministic.
pub trait Denoiser: Sync {
    /// Length of one flattened state row.
    fn input_dim(&self) -> usize;

    /// Predicted noise for every row of `x_t` (shape `[.., input_dim]`) at timestep `t`.
    fn eval(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// A denoiser with a flat parameter vector and an analytic gradient.
pub trait Trainable: Denoiser {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Evaluate with one timestep per row.
    fn eval_rows(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor>;

    /// Mean absolute deviation between the prediction and `target` over all
    /// elements, and its gradient w.r.t. the parameters (subgradient 0 at a tie).
    fn loss_and_grad(&self, x_t: &Tensor, ts: &[usize], target: &Tensor) -> Result<(f64, Vec<f64>)>;
}

/// L1 loss only, through `eval_rows`.
pub fn l1_loss<M: Trainable + ?Sized>(model: &M, x_t: &Tensor, ts: &[usize], target: &Tensor) -> Result<f64> {
    let y = model.eval_rows(x_t, ts)?;
    y.ensure_same_shape(target)?;
    Ok(y.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Result of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheck {
    pub checked: usize,
    /// Probes discarded because the perturbation moved a residual across zero.
    pub resampled: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Relative error with an absolute floor so that vanishing gradients do not
/// turn rounding noise into a failure.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn residual_signs(pred: &Tensor, target: &Tensor) -> Vec<i8> {
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).partial_cmp(&0.0).map_or(0, |o| o as i8)).collect()
}

/// Central differences with step `h` on `count` randomly chosen parameters.
///
/// The L1 loss is not differentiable where a residual is zero, so a probe
/// whose `+h` or `-h` evaluation flips the sign of any residual is discarded
/// and another parameter is drawn.
pub fn gradient_check<M: Trainable + Clone>(
    model: &M,
    x_t: &Tensor,
    ts: &[usize],
    target: &Tensor,
    count: usize,
    h: f64,
    rng: &mut RngStream,
) -> Result<GradCheck> {
    let (_, grad) = model.loss_and_grad(x_t, ts, target)?;
    let base = residual_signs(&model.eval_rows(x_t, ts)?, target);
    if base.contains(&0) {
        return Err(crate::error::Error::Domain("gradient check at an exact L1 kink".into()));
    }
    let n = model.params().len();
    let mut probe = model.clone();
    let mut out = GradCheck { checked: 0, resampled: 0, max_rel_error: 0.0, worst_index: 0 };
    let loss = |pred: &Tensor| {
        pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
    };
    while out.checked < count {
        if out.resampled > 100 * count.max(1) {
            return Err(crate::error::Error::Domain("gradient check keeps hitting L1 kinks; reduce h".into()));
        }
        let i = rng.int_inclusive(0, n - 1);
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = probe.eval_rows(x_t, ts)?;
        probe.params_mut()[i] = orig - h;
        let down = probe.eval_rows(x_t, ts)?;
        probe.params_mut()[i] = orig;
        if residual_signs(&up, target) != base || residual_signs(&down, target) != base {
            out.resampled += 1;
            continue;
        }
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        let err = grad_rel_error(grad[i], numeric);
        if err > out.max_rel_error {
            out.max_rel_error = err;
            out.worst_index = i;
        }
        out.checked += 1;
    }
    Ok(out)
}
