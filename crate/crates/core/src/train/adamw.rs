use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Moments {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            second: first.clone(),
            first,
        }
    }
}

/// One AdamW update at step `t` (1-based): decoupled decay
/// `p -= lr·wd·p`, then the bias-corrected Adam step.
///
/// Every gradient is checked before any parameter moves, so a non-finite
/// gradient leaves parameters and moments untouched.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    names: &[String],
    moments: &mut Moments,
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), TrainError> {
    if t == 0 {
        return Err(TrainError::Config("AdamW step index starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != moments.first.len() || params.len() != moments.second.len() {
        return Err(TrainError::Config(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            moments.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::Config(format!(
                "gradient {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("param{i}"));
            return Err(TrainError::NonFiniteGradient(name));
        }
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &gi), (mi, vi)) in iter {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * cfg.weight_decay * *w;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
