//! Adaptive-margin contrastive loss over adjacent timesteps.
//!
//! Positives are `(t, t+1)` inside one sequence; negatives for anchor `t` are
//! every `k ∉ {t, t+1}` of the same sequence. Before the softmax, the
//! embedding similarity matrix `M` is reshaped by
//!
//! ```text
//! M_margin = ½(1 − Y)·M² + ½·Y·max(0, margin − M)²
//! ```
//!
//! where `Y` is a binary label derived from raw-data cosine similarity:
//! `Y = 0` if `sim(x_t, x_k) > threshold`, else `Y = 1`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Domain(String),
    #[error("invalid loss config: {0}")]
    Config(String),
}

/// Which off-diagonal pairs get a pseudo-label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelScope {
    /// Only `(t, t+1)` is labelled; every other entry keeps the raw `M`.
    AdjacentOnly,
    /// Every pair is labelled from its data-space similarity.
    #[default]
    Pairwise,
}

/// How the similarity matrix is reshaped before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityTransform {
    #[default]
    Margin,
    /// Leave `M` untouched. Debug switch: turns the objective into plain
    /// InfoNCE.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    #[serde(with = "crate::float_serde")]
    pub threshold: f64,
    pub margin: f64,
    pub scope: PseudoLabelScope,
    pub cosine_epsilon: f64,
    pub transform: SimilarityTransform,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            threshold: 0.4,
            margin: 5.0,
            scope: PseudoLabelScope::Pairwise,
            cosine_epsilon: 1e-12,
            transform: SimilarityTransform::Margin,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > 0.0) {
            return Err(LossError::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if !(self.margin > 0.0) {
            return Err(LossError::Config(format!("margin {} must be > 0", self.margin)));
        }
        if !(self.cosine_epsilon > 0.0) {
            return Err(LossError::Config("cosine_epsilon must be > 0".into()));
        }
        if self.threshold.is_nan() {
            return Err(LossError::Config("threshold is NaN".into()));
        }
        Ok(())
    }
}

/// `u·v / (max(‖u‖, ε)·max(‖v‖, ε))`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64], epsilon: f64) -> Result<f64, LossError> {
    if u.len() != v.len() {
        return Err(LossError::Dimension(format!(
            "cosine of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(epsilon);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(epsilon);
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    /// `Y = 0`
    Similar,
    /// `Y = 1`
    Dissimilar,
    /// Unlabelled; the raw similarity passes through.
    PassThrough,
}

impl PairLabel {
    fn from_similarity(sim: f64, threshold: f64) -> Self {
        if sim > threshold {
            PairLabel::Similar
        } else {
            PairLabel::Dissimilar
        }
    }

    /// `Y` as a number, if labelled.
    pub fn value(self) -> Option<u8> {
        match self {
            PairLabel::Similar => Some(0),
            PairLabel::Dissimilar => Some(1),
            PairLabel::PassThrough => None,
        }
    }
}

/// Symmetric `T×T` matrix of pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelMatrix {
    size: usize,
    scope: PseudoLabelScope,
    values: Vec<PairLabel>,
}

impl PseudoLabelMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn scope(&self) -> PseudoLabelScope {
        self.scope
    }

    pub fn get(&self, i: usize, j: usize) -> PairLabel {
        self.values[i * self.size + j]
    }

    /// Builds a matrix from explicit labels; `labels` is row-major `T×T`.
    pub fn from_labels(size: usize, scope: PseudoLabelScope, labels: Vec<PairLabel>) -> Result<Self, LossError> {
        if labels.len() != size * size {
            return Err(LossError::Dimension(format!("{} labels for {size}×{size}", labels.len())));
        }
        for i in 0..size {
            for j in 0..i {
                if labels[i * size + j] != labels[j * size + i] {
                    return Err(LossError::Domain(format!("labels not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            size,
            scope,
            values: labels,
        })
    }

    fn masks(&self) -> [Vec<f64>; 3] {
        let pick = |want: PairLabel| {
            self.values
                .iter()
                .map(|&l| if l == want { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        };
        [
            pick(PairLabel::Similar),
            pick(PairLabel::Dissimilar),
            pick(PairLabel::PassThrough),
        ]
    }
}

/// Pseudo-labels for one sequence of raw steps `x` (`T×D`, row-major).
pub fn pseudo_labels(x: &[f64], seq_len: usize, dim: usize, cfg: &LossConfig) -> Result<PseudoLabelMatrix, LossError> {
    if seq_len < 2 {
        return Err(LossError::Domain(format!("pseudo-labels need T >= 2, got {seq_len}")));
    }
    if x.len() != seq_len * dim {
        return Err(LossError::Dimension(format!("{} values for {seq_len}×{dim}", x.len())));
    }
    let row = |t: usize| &x[t * dim..(t + 1) * dim];
    let n = seq_len;
    let mut values = vec![PairLabel::PassThrough; n * n];
    match cfg.scope {
        PseudoLabelScope::AdjacentOnly => {
            for t in 0..n - 1 {
                let l = PairLabel::from_similarity(cosine_sim(row(t), row(t + 1), cfg.cosine_epsilon)?, cfg.threshold);
                values[t * n + t + 1] = l;
                values[(t + 1) * n + t] = l;
            }
        }
        PseudoLabelScope::Pairwise => {
            for i in 0..n {
                for j in i..n {
                    let l = PairLabel::from_similarity(cosine_sim(row(i), row(j), cfg.cosine_epsilon)?, cfg.threshold);
                    values[i * n + j] = l;
                    values[j * n + i] = l;
                }
            }
        }
    }
    Ok(PseudoLabelMatrix {
        size: n,
        scope: cfg.scope,
        values,
    })
}

/// Scalar form of the margin transform for a labelled entry.
pub fn margin_value(m: f64, dissimilar: bool, margin: f64) -> f64 {
    if dissimilar {
        let h = (margin - m).max(0.0);
        0.5 * (h * h)
    } else {
        0.5 * (m * m)
    }
}

/// Full cosine-similarity matrix of the rows of `z` (`T×d`) on the graph.
pub fn pairwise_cosine_matrix(g: &mut Graph, z: Var, epsilon: f64) -> Result<Var, LossError> {
    if g.shape(z).len() != 2 || g.shape(z)[0] < 2 {
        return Err(LossError::Domain(format!(
            "cosine matrix needs T×d with T >= 2, got {:?}",
            g.shape(z)
        )));
    }
    let unit = g.normalize_rows(z, epsilon)?;
    let unit_t = g.transpose(unit)?;
    Ok(g.matmul(unit, unit_t)?)
}

/// Applies the margin transform to `m` (`T×T`) entrywise according to
/// `labels`; pass-through entries keep `m`.
pub fn margin_transform(g: &mut Graph, m: Var, labels: &PseudoLabelMatrix, margin: f64) -> Result<Var, LossError> {
    let n = labels.size();
    if g.shape(m) != [n, n] {
        return Err(LossError::Dimension(format!(
            "similarity {:?} vs labels {n}×{n}",
            g.shape(m)
        )));
    }
    let [similar, dissimilar, pass] = labels.masks();
    let mask = |g: &mut Graph, v: Vec<f64>| g.constant(Tensor::new(vec![n, n], v).expect("n×n mask"));

    let sq = g.square(m)?;
    let sim_mask = mask(g, similar);
    let a = g.mul(sq, sim_mask)?;
    let a = g.scale(a, 0.5)?;

    let gap = g.rsub_scalar(margin, m)?;
    let hinge = g.clamp_floor_zero(gap);
    let hinge_sq = g.square(hinge)?;
    let dis_mask = mask(g, dissimilar);
    let b = g.mul(hinge_sq, dis_mask)?;
    let b = g.scale(b, 0.5)?;

    let mut out = g.add(a, b)?;
    if pass.iter().any(|&p| p != 0.0) {
        let pass_mask = mask(g, pass);
        let p = g.mul(m, pass_mask)?;
        out = g.add(out, p)?;
    }
    Ok(out)
}

/// One InfoNCE term on a plain similarity row:
/// `LSE_{k ∉ {anchor, pos}}(row[k]/τ) − row[pos]/τ`.
pub fn infonce_term(row: &[f64], anchor: usize, positive: usize, temperature: f64) -> Result<f64, LossError> {
    if row.len() < 3 {
        return Err(LossError::Domain(format!("InfoNCE needs T >= 3, got {}", row.len())));
    }
    if !(temperature > 0.0) {
        return Err(LossError::Config(format!("temperature {temperature} must be > 0")));
    }
    let negatives: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != anchor && k != positive)
        .map(|(_, &v)| v / temperature)
        .collect();
    let m = negatives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + negatives.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - row[positive] / temperature)
}

/// Per-anchor InfoNCE terms for `t = 0..T-2` of one `T×T` matrix, as a
/// length `T-1` vector.
pub fn infonce_terms(g: &mut Graph, m: Var, temperature: f64) -> Result<Var, LossError> {
    let shape = g.shape(m).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(LossError::Dimension(format!("expected a square matrix, got {shape:?}")));
    }
    let n = shape[0];
    if n < 3 {
        return Err(LossError::Domain(format!("InfoNCE needs T >= 3, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(LossError::Config(format!("temperature {temperature} must be > 0")));
    }
    let tau = g.constant(Tensor::scalar(temperature));
    let scaled = g.div(m, tau)?;
    let pos_idx: Vec<usize> = (0..n - 1).map(|t| t * n + t + 1).collect();
    let neg_idx: Vec<usize> = (0..n - 1)
        .flat_map(|t| (0..n).filter(move |&k| k != t && k != t + 1).map(move |k| t * n + k))
        .collect();
    let pos = g.gather(scaled, pos_idx, &[n - 1])?;
    let neg = g.gather(scaled, neg_idx, &[n - 1, n - 2])?;
    let lse = g.log_sum_exp(neg, 1)?;
    Ok(g.sub(lse, pos)?)
}

fn check_embeddings(g: &Graph, z: Var) -> Result<(usize, usize, usize), LossError> {
    match *g.shape(z) {
        [b, t, d] => Ok((b, t, d)),
        ref s => Err(LossError::Dimension(format!("embeddings must be B×T×d, got {s:?}"))),
    }
}

fn contrastive(g: &mut Graph, x: Option<&Tensor>, z: Var, cfg: &LossConfig) -> Result<Var, LossError> {
    cfg.validate()?;
    let (batch, seq_len, d) = check_embeddings(g, z)?;
    if batch == 0 {
        return Err(LossError::Domain("empty batch".into()));
    }
    if seq_len < 3 {
        return Err(LossError::Domain(format!("InfoNCE needs T >= 3, got {seq_len}")));
    }
    if let Some(x) = x {
        match x.shape() {
            [b, t, _] if *b == batch && *t == seq_len => {}
            s => {
                return Err(LossError::Dimension(format!(
                    "inputs {s:?} do not match embeddings {:?}",
                    [batch, seq_len, d]
                )))
            }
        }
    }
    let mut total: Option<Var> = None;
    for b in 0..batch {
        let block: Vec<usize> = (b * seq_len * d..(b + 1) * seq_len * d).collect();
        let zb = g.gather(z, block, &[seq_len, d])?;
        let m = pairwise_cosine_matrix(g, zb, cfg.cosine_epsilon)?;
        let transformed = match (x, cfg.transform) {
            (Some(x), SimilarityTransform::Margin) => {
                let dim = x.shape()[2];
                let xb = &x.data()[b * seq_len * dim..(b + 1) * seq_len * dim];
                let labels = pseudo_labels(xb, seq_len, dim, cfg)?;
                margin_transform(g, m, &labels, cfg.margin)?
            }
            _ => m,
        };
        let terms = infonce_terms(g, transformed, cfg.temperature)?;
        let s = g.sum(terms, None)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let total = total.expect("batch is non-empty");
    let count = g.constant(Tensor::scalar((batch * (seq_len - 1)) as f64));
    Ok(g.div(total, count)?)
}

/// Margin-adjusted InfoNCE averaged over anchors and sequences.
///
/// `x` is the raw `B×T×D` input used for pseudo-labels; `z` the `B×T×d`
/// embeddings on the graph.
pub fn emargin_loss(g: &mut Graph, x: &Tensor, z: Var, cfg: &LossConfig) -> Result<Var, LossError> {
    contrastive(g, Some(x), z, cfg)
}

/// InfoNCE over adjacent positives with no pseudo-labels or transform.
pub fn plain_infonce_loss(g: &mut Graph, z: Var, temperature: f64) -> Result<Var, LossError> {
    let cfg = LossConfig {
        temperature,
        transform: SimilarityTransform::Identity,
        ..LossConfig::default()
    };
    contrastive(g, None, z, &cfg)
}
