use crate::error::{Error, Result};
use crate::micrograd::params::ParameterSet;

/// One SGD update with global-norm clipping.
///
/// The gradient buffers are scaled so their joint L2 norm is at most
/// `clip_norm`, parameters move by `−lr · g`, and the buffers are zeroed.
/// Returns the norm measured before clipping. A non-finite gradient aborts
/// the step and leaves the parameters untouched.
pub fn sgd_step(params: &mut ParameterSet, lr: f64, clip_norm: f64) -> Result<f64> {
    for (name, p) in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let norm = params.grad_norm();
    let scale = if clip_norm > 0.0 && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };
    for (_, p) in params.iter_mut() {
        let step = lr * scale;
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= step * g;
        }
    }
    params.zero_grad();
    Ok(norm)
}
