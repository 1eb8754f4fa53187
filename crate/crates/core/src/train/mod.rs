//! AdamW training of the encoder against either contrastive objective.

mod adamw;
mod checkpoint;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamWConfig, Moments};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::encoder::{encode, EncoderConfig, EncoderError, EncoderParams, Mode};
use crate::loss::{emargin_loss, plain_infonce_loss, LossConfig, LossError};
use crate::signal::SequenceBatch;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Emargin,
    Infonce,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Emargin => "emargin",
            LossKind::Infonce => "infonce",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "emargin" => Ok(LossKind::Emargin),
            "infonce" => Ok(LossKind::Infonce),
            _ => Err(format!("unknown loss {s:?}, expected emargin or infonce")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Optimizer steps. `None` picks the budget from the training set size.
    pub iterations: Option<usize>,
    /// Training sets with fewer timesteps than this get the short budget.
    pub budget_threshold: usize,
    pub short_budget: usize,
    pub long_budget: usize,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub seed: u64,
    pub adamw: AdamWConfig,
    /// Global gradient-norm clip. Off by default.
    pub clip_grad_norm: Option<f64>,
    /// Log the loss every this many steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-3,
            iterations: None,
            budget_threshold: 160_000,
            short_budget: 200,
            long_budget: 600,
            loss_kind: LossKind::Emargin,
            loss: LossConfig::default(),
            seed: 1,
            adamw: AdamWConfig::default(),
            clip_grad_norm: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Step count for a training set of `samples` timesteps.
    pub fn budget(&self, samples: usize) -> usize {
        match self.iterations {
            Some(n) => n,
            None if samples < self.budget_threshold => self.short_budget,
            None => self.long_budget,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.iterations == Some(0) || self.short_budget == 0 || self.long_budget == 0 {
            return Err(TrainError::Config("iteration budgets must be positive".into()));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) || !(a.weight_decay >= 0.0) {
            return Err(TrainError::Config(format!("AdamW settings out of range: {a:?}")));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(TrainError::Config(format!("clip norm {c} must be positive")));
            }
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Loss of one sampled batch under the configured objective, recorded on `g`.
fn step_loss(
    g: &mut Graph,
    x: &Tensor,
    params: &mut EncoderParams,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(crate::autodiff::Var, Vec<crate::autodiff::Var>), TrainError> {
    let xv = g.constant(x.clone());
    let out = encode(g, xv, params, enc, Mode::Train)?;
    let loss = match cfg.loss_kind {
        LossKind::Emargin => emargin_loss(g, x, out.z, &cfg.loss)?,
        LossKind::Infonce => plain_infonce_loss(g, out.z, cfg.loss.temperature)?,
    };
    Ok((loss, out.params))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|t| t.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Trains a freshly initialised encoder on `data`.
///
/// Each step draws `batch_size` sequences uniformly with replacement. Parameter
/// init and batch sampling use separate seeded streams, so the loss trace is a
/// pure function of `(data, enc, cfg)`. When `checkpoint_path` is given the
/// final state is written there, and so is the last good state if a step
/// produces a non-finite loss or gradient.
pub fn train(
    data: &SequenceBatch,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    enc.validate()?;
    if data.batch() == 0 {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if data.dim() != enc.input_dim {
        return Err(TrainError::Config(format!(
            "data has D = {}, encoder expects {}",
            data.dim(),
            enc.input_dim
        )));
    }
    let steps = cfg.budget(data.num_steps());
    let mut params = EncoderParams::init(enc, cfg.seed);
    let mut moments = Moments::zeros_like(params.trainable());
    let names = params.trainable_names();
    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler.set_stream(1);
    let mut trace = Vec::with_capacity(steps);

    let snapshot = |params: &EncoderParams, moments: &Moments, iteration: usize, trace: &[f64]| {
        Checkpoint::new(enc.clone(), params, moments, iteration as u64, cfg.clone(), trace.to_vec())
    };
    let abort = |err: TrainError, params: &EncoderParams, moments: &Moments, iteration: usize, trace: &[f64]| {
        if let Some(path) = checkpoint_path {
            let ck = snapshot(params, moments, iteration, trace);
            if let Err(e) = save_checkpoint(&ck, path) {
                log::error!("could not write partial checkpoint: {e}");
            } else {
                log::warn!("partial checkpoint after {iteration} steps written to {}", path.display());
            }
        }
        err
    };

    log::info!(
        "training {} for {steps} steps on {} sequences ({} timesteps)",
        cfg.loss_kind,
        data.batch(),
        data.num_steps()
    );
    for step in 1..=steps {
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| sampler.random_range(0..data.batch())).collect();
        let x = data.select(&picks).to_tensor();
        // Running stats are only committed once the step succeeds.
        let mut trial = params.clone();
        let mut g = Graph::new();
        let (loss, vars) = step_loss(&mut g, &x, &mut trial, enc, cfg)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            let err = TrainError::NonFiniteLoss { step, value };
            return Err(abort(err, &params, &moments, step - 1, &trace));
        }
        let gr = g.backward(loss)?;
        let mut grads: Vec<Tensor> = vars
            .iter()
            .zip(params.trainable())
            .map(|(v, p)| gr.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        if let Some(c) = cfg.clip_grad_norm {
            clip(&mut grads, c);
        }
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        {
            let mut targets = trial.trainable_mut();
            if let Err(e) = adamw_step(&mut targets, &grad_refs, &names, &mut moments, step as u64, cfg.learning_rate, &cfg.adamw) {
                return Err(abort(e, &params, &moments, step - 1, &trace));
            }
        }
        params = trial;
        trace.push(value);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == steps) {
            log::info!("step {step}/{steps} loss {value:.6}");
        }
    }

    let ck = snapshot(&params, &moments, steps, &trace);
    if let Some(path) = checkpoint_path {
        save_checkpoint(&ck, path)?;
    }
    Ok(ck)
}
