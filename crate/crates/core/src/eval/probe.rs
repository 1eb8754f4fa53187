use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::{Graph, Tensor};
use crate::signal::Label;
use crate::train::{adamw_step, AdamWConfig, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adamw: AdamWConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 500,
            adamw: AdamWConfig::default(),
        }
    }
}

/// Softmax-regression head on frozen embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `d × K`
    pub weight: Tensor,
    pub bias: Tensor,
    /// Label of each output column.
    pub classes: Vec<Label>,
    pub config: ProbeConfig,
    /// Cross-entropy before each epoch's update.
    pub loss_trace: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, z: &Tensor) -> Result<Tensor, EvalError> {
        let (n, d) = match z.shape() {
            [n, d] => (*n, *d),
            s => return Err(EvalError::Dimension(format!("expected n×d embeddings, got {s:?}"))),
        };
        let k = self.classes.len();
        if d != self.weight.shape()[0] {
            return Err(EvalError::Dimension(format!("embeddings have d = {d}, probe expects {}", self.weight.shape()[0])));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for c in 0..k {
                let mut s = self.bias.data()[c];
                for j in 0..d {
                    s += z.data()[i * d + j] * self.weight.data()[j * k + c];
                }
                out[i * k + c] = s;
            }
        }
        Ok(Tensor::new(vec![n, k], out).expect("n×k"))
    }

    /// Arg-max class per row; ties go to the smaller label.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<Label>, EvalError> {
        let l = self.logits(z)?;
        let k = self.classes.len();
        Ok(l.data()
            .chunks(k)
            .map(|r| {
                let best = r
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc })
                    .0;
                self.classes[best]
            })
            .collect())
    }
}

/// Fits multinomial logistic regression by full-batch AdamW on mean
/// cross-entropy. Weights start at zero, so the fit is deterministic. `z` is
/// read only.
pub fn fit_probe(z: &Tensor, labels: &[Label], cfg: &ProbeConfig) -> Result<LinearProbe, EvalError> {
    let (n, d) = match z.shape() {
        [n, d] => (*n, *d),
        s => return Err(EvalError::Dimension(format!("expected n×d embeddings, got {s:?}"))),
    };
    if labels.len() != n {
        return Err(EvalError::Dimension(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut classes: Vec<Label> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::Domain(format!("probe needs at least 2 classes, got {}", classes.len())));
    }
    if !(cfg.learning_rate > 0.0) || cfg.epochs == 0 {
        return Err(EvalError::Domain("probe needs a positive learning rate and epoch count".into()));
    }
    let k = classes.len();
    let target: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| i * k + classes.binary_search(l).expect("collected from labels"))
        .collect();

    let mut weight = Tensor::zeros(&[d, k]);
    let mut bias = Tensor::zeros(&[k]);
    let mut moments = Moments::zeros_like([&weight, &bias]);
    let names = ["probe.weight".to_string(), "probe.bias".to_string()];
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let w = g.param(weight.clone());
        let b = g.param(bias.clone());
        let logits = g.matmul(zv, w)?;
        let logits = g.add_bias(logits, b)?;
        let lse = g.log_sum_exp(logits, 1)?;
        let picked = g.gather(logits, target.clone(), &[n])?;
        let nll = g.sub(lse, picked)?;
        let loss = g.mean(nll, None)?;
        trace.push(g.value(loss).item());
        let grads = g.backward(loss)?;
        let gw = grads.get(w).expect("weight is a parameter").clone();
        let gb = grads.get(b).expect("bias is a parameter").clone();
        adamw_step(
            &mut [&mut weight, &mut bias],
            &[&gw, &gb],
            &names,
            &mut moments,
            epoch as u64,
            cfg.learning_rate,
            &cfg.adamw,
        )
        .map_err(|e| EvalError::Numeric(e.to_string()))?;
    }
    Ok(LinearProbe {
        weight,
        bias,
        classes,
        config: cfg.clone(),
        loss_trace: trace,
    })
}
