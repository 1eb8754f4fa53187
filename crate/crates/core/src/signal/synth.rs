use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BatchMeta, Label, SequenceBatch, SignalError};

/// Parameters of the regime-switching generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_seqs: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Mean regime length in steps; `inf` never switches.
    #[serde(with = "crate::float_serde")]
    pub regime_dwell: f64,
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_seqs: 40,
            seq_len: 120,
            dim: 16,
            num_classes: 3,
            regime_dwell: 20.0,
            noise_sigma: 0.3,
        }
    }
}

const MAX_MEAN_COSINE: f64 = 0.3;

/// `k` unit vectors in `dim` dimensions with pairwise cosine at most 0.3,
/// by rejection sampling from isotropic Gaussians.
pub fn regime_means(dim: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>, SignalError> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while means.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(SignalError::Domain(format!(
                "cannot place {k} regime means with cosine <= {MAX_MEAN_COSINE} in {dim} dimensions"
            )));
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let ok = means
            .iter()
            .all(|m| m.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= MAX_MEAN_COSINE);
        if ok {
            means.push(v);
        }
    }
    Ok(means)
}

/// Hidden-Markov regime sequences: each step stays in its regime with
/// probability `1 - 1/dwell`, otherwise jumps to a uniformly chosen other
/// regime. Regime `k` emits `mu_k + N(0, sigma² I)`.
pub fn synth_regimes(spec: &SynthSpec, seed: u64) -> Result<SequenceBatch, SignalError> {
    if spec.num_classes < 2 {
        return Err(SignalError::Domain("synth needs at least 2 classes".into()));
    }
    if !(spec.regime_dwell >= 2.0) {
        return Err(SignalError::Domain(format!(
            "regime dwell {} < 2",
            spec.regime_dwell
        )));
    }
    if spec.num_seqs == 0 || spec.dim == 0 || !(spec.noise_sigma >= 0.0) {
        return Err(SignalError::Domain("synth needs num_seqs > 0, dim > 0, sigma >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = regime_means(spec.dim, spec.num_classes, &mut rng)?;
    let switch_p = 1.0 / spec.regime_dwell;
    let k = spec.num_classes;

    let mut data = Vec::with_capacity(spec.num_seqs * spec.seq_len * spec.dim);
    let mut labels = Vec::with_capacity(spec.num_seqs * spec.seq_len);
    for _ in 0..spec.num_seqs {
        let mut regime = rng.random_range(0..k);
        for t in 0..spec.seq_len {
            if t > 0 && rng.random::<f64>() < switch_p {
                regime = (regime + rng.random_range(1..k)) % k;
            }
            for &m in &means[regime] {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(m + spec.noise_sigma * noise);
            }
            labels.push(regime as Label);
        }
    }
    let meta = BatchMeta {
        source_ids: (0..spec.num_seqs).map(|i| format!("synth-{i}")).collect(),
        class_map: (0..k).map(|c| (c as Label, format!("regime_{c}"))).collect(),
        ..Default::default()
    };
    SequenceBatch::new(spec.num_seqs, spec.seq_len, spec.dim, data, Some(labels), meta)
}
