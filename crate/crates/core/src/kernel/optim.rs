use serde::{Deserialize, Serialize};

use super::{KernelError, ParamStore, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            clip_norm: Some(5.0),
        }
    }
}

/// `v ← μ·v + g + λ·p`, `p ← p − η·v`, then clear every gradient slot.
pub fn sgd_step(
    store: &mut ParamStore,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), KernelError> {
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(KernelError::StaleGradients(name.to_owned()));
    }
    for name in store.names().map(str::to_owned).collect::<Vec<_>>() {
        let p = store.params_mut(&name);
        let grad = p.grad.take().expect("checked above");
        let v = p
            .velocity
            .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for ((vi, gi), pi) in v
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(p.value.data_mut())
        {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
        if !p.value.is_finite() {
            return Err(KernelError::NonFinite(name));
        }
    }
    Ok(())
}

/// Rescale gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for name in store.names().map(str::to_owned).collect::<Vec<_>>() {
            if let Some(g) = store.params_mut(&name).grad.as_mut() {
                g.scale(s);
            }
        }
    }
    norm
}
