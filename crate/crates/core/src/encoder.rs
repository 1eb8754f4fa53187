//! Three blocks of pointwise (kernel size 1) convolution, batch norm and
//! ReLU. A kernel of size 1 sees one timestep, so each block is a per-step
//! affine map applied to the `(B·T)×C` reshaped input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, BatchNormMode, BatchNormStats, Graph, Tensor, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Output widths of the first two blocks.
    pub hidden_dims: [usize; 2],
    /// Output width of the last block.
    pub output_dim: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 156,
            hidden_dims: [64, 64],
            output_dim: 320,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            ..Self::default()
        }
    }

    /// 32-wide embedding preset.
    pub fn compact(input_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim: 32,
            ..Self::default()
        }
    }

    /// `[D, h1, h2, d]`
    pub fn widths(&self) -> [usize; 4] {
        [self.input_dim, self.hidden_dims[0], self.hidden_dims[1], self.output_dim]
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.widths().contains(&0) {
            return Err(EncoderError::Config(format!("zero width in {:?}", self.widths())));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(EncoderError::Config(format!("momentum {} outside (0, 1]", self.bn_momentum)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(EncoderError::Config("batch-norm epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    /// `in × out`
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<Block>,
    pub stats: Vec<BatchNormStats>,
}

const TRAINABLE_PER_BLOCK: [&str; 4] = ["weight", "bias", "gamma", "beta"];

impl EncoderParams {
    /// Uniform `±sqrt(6 / fan_in)` weights, zero bias, unit gamma, zero beta,
    /// running stats `(0, 1)`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.widths();
        let mut blocks = Vec::with_capacity(3);
        let mut stats = Vec::with_capacity(3);
        for pair in w.windows(2) {
            let (fan_in, out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = (0..fan_in * out).map(|_| rng.random_range(-bound..=bound)).collect();
            blocks.push(Block {
                weight: Tensor::new(vec![fan_in, out], weight).expect("sized"),
                bias: Tensor::zeros(&[out]),
                gamma: Tensor::full(&[out], 1.0),
                beta: Tensor::zeros(&[out]),
            });
            stats.push(BatchNormStats::new(out));
        }
        Self { blocks, stats }
    }

    /// Trainable tensors in canonical order: per block weight, bias, gamma,
    /// beta.
    pub fn trainable(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.weight, &b.bias, &b.gamma, &b.beta])
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta])
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        (0..self.blocks.len())
            .flat_map(|i| TRAINABLE_PER_BLOCK.iter().map(move |n| format!("block{i}.{n}")))
            .collect()
    }

    /// Records every trainable tensor as a differentiable leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.trainable().into_iter().map(|t| g.param(t.clone())).collect()
    }

    pub fn check(&self, cfg: &EncoderConfig) -> Result<(), EncoderError> {
        let w = cfg.widths();
        if self.blocks.len() != 3 || self.stats.len() != 3 {
            return Err(EncoderError::Dimension(format!("{} blocks, expected 3", self.blocks.len())));
        }
        for (i, (b, s)) in self.blocks.iter().zip(&self.stats).enumerate() {
            let (fi, fo) = (w[i], w[i + 1]);
            let ok = b.weight.shape() == [fi, fo]
                && b.bias.len() == fo
                && b.gamma.len() == fo
                && b.beta.len() == fo
                && s.running_mean.len() == fo
                && s.running_var.len() == fo;
            if !ok {
                return Err(EncoderError::Dimension(format!("block {i} does not match {fi}→{fo}")));
            }
            if s.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(EncoderError::Dimension(format!("block {i} has non-positive running variance")));
            }
        }
        Ok(())
    }
}

/// Where batch norm takes its statistics from.
pub enum Stats<'a> {
    /// Batch statistics; running estimates are updated in place.
    Train(&'a mut [BatchNormStats]),
    /// Stored running estimates.
    Eval(&'a [BatchNormStats]),
}

/// Runs the three blocks on `x` (`B×T×D` or `N×D`) with trainable tensors
/// supplied as graph nodes in [`EncoderParams::trainable`] order.
pub fn forward(g: &mut Graph, cfg: &EncoderConfig, x: Var, vars: &[Var], mut stats: Stats<'_>) -> Result<Var, EncoderError> {
    if vars.len() != 12 {
        return Err(EncoderError::Dimension(format!("{} parameter nodes, expected 12", vars.len())));
    }
    let shape = g.shape(x).to_vec();
    let (rows, lead): (usize, Vec<usize>) = match shape[..] {
        [b, t, d] if d == cfg.input_dim => (b * t, vec![b, t]),
        [n, d] if d == cfg.input_dim => (n, vec![n]),
        _ => {
            return Err(EncoderError::Dimension(format!(
                "input {shape:?} does not end in D = {}",
                cfg.input_dim
            )))
        }
    };
    let mut h = if shape.len() == 3 {
        g.reshape(x, &[rows, cfg.input_dim])?
    } else {
        x
    };
    for (i, p) in vars.chunks(4).enumerate() {
        let lin = g.matmul(h, p[0])?;
        let lin = g.add_bias(lin, p[1])?;
        let mode = match &mut stats {
            Stats::Train(s) => BatchNormMode::Train {
                stats: &mut s[i],
                momentum: cfg.bn_momentum,
            },
            Stats::Eval(s) => BatchNormMode::Eval { stats: &s[i] },
        };
        let normed = g.batchnorm(lin, p[2], p[3], mode, cfg.bn_epsilon)?;
        h = g.relu(normed);
    }
    let mut out_shape = lead;
    out_shape.push(cfg.output_dim);
    Ok(g.reshape(h, &out_shape)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Encoded {
    pub z: Var,
    /// Parameter leaves in [`EncoderParams::trainable`] order.
    pub params: Vec<Var>,
}

/// Records `f(x)` on the graph. Train mode updates the running statistics.
pub fn encode(g: &mut Graph, x: Var, params: &mut EncoderParams, cfg: &EncoderConfig, mode: Mode) -> Result<Encoded, EncoderError> {
    params.check(cfg)?;
    let vars = params.register(g);
    let stats = match mode {
        Mode::Train => Stats::Train(&mut params.stats),
        Mode::Eval => Stats::Eval(&params.stats),
    };
    let z = forward(g, cfg, x, &vars, stats)?;
    Ok(Encoded { z, params: vars })
}

/// Eval-mode embeddings without gradient bookkeeping.
pub fn embed(params: &EncoderParams, cfg: &EncoderConfig, x: &Tensor) -> Result<Tensor, EncoderError> {
    params.check(cfg)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = params.trainable().into_iter().map(|t| g.constant(t.clone())).collect();
    let xv = g.constant(x.clone());
    let z = forward(&mut g, cfg, xv, &vars, Stats::Eval(&params.stats))?;
    Ok(g.value(z).clone())
}
