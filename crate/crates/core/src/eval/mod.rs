//! Clusterability metrics, linear probing and embedding export.

mod cluster;
mod export;
mod metrics;
mod probe;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cluster::{davies_bouldin, kmeans, silhouette, KMeansResult};
pub use export::export_embeddings;
pub use metrics::{classification_metrics, Averaged, ClassScores, ProbeReport};
pub use probe::{fit_probe, LinearProbe, ProbeConfig};

use crate::autodiff::{AutodiffError, Tensor};
use crate::encoder::{embed, EncoderConfig, EncoderError, EncoderParams};
use crate::signal::{balanced_subset, EvalSet, Label, SequenceBatch, SignalError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Domain(String),
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

/// Where the partition scored by DBI and Silhouette comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentSource {
    #[default]
    Kmeans,
    /// Ground-truth classes.
    Labels,
}

impl std::fmt::Display for AssignmentSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AssignmentSource::Kmeans => "kmeans",
            AssignmentSource::Labels => "labels",
        })
    }
}

impl std::str::FromStr for AssignmentSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kmeans" => Ok(AssignmentSource::Kmeans),
            "labels" => Ok(AssignmentSource::Labels),
            _ => Err(format!("unknown assignment {s:?}, expected kmeans or labels")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    /// Steps per class in the clustering subset. `None` takes the rarest
    /// class's count, capped at `max_per_class`.
    pub per_class: Option<usize>,
    pub max_per_class: usize,
    /// Cluster count; must equal the number of classes when given.
    pub k: Option<usize>,
    pub assignment: AssignmentSource,
    pub kmeans_max_iters: usize,
    pub probe: ProbeConfig,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            per_class: None,
            max_per_class: 300,
            k: None,
            assignment: AssignmentSource::Kmeans,
            kmeans_max_iters: 300,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    #[serde(with = "crate::float_serde")]
    pub dbi: f64,
    pub silhouette: f64,
    pub k: usize,
    pub assignment_source: AssignmentSource,
    pub seed: u64,
    /// Points scored.
    pub n: usize,
}

/// DBI and Silhouette of `z` under the chosen partition.
pub fn cluster_report(
    z: &Tensor,
    labels: &[Label],
    k: usize,
    source: AssignmentSource,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterReport, EvalError> {
    let assignments: Vec<usize> = match source {
        AssignmentSource::Kmeans => kmeans(z, k, seed, max_iters)?.assignments,
        AssignmentSource::Labels => {
            let mut classes: Vec<Label> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            labels.iter().map(|l| classes.binary_search(l).expect("present")).collect()
        }
    };
    Ok(ClusterReport {
        dbi: davies_bouldin(z, &assignments)?,
        silhouette: silhouette(z, &assignments)?,
        k,
        assignment_source: source,
        seed,
        n: assignments.len(),
    })
}

/// Everything measured for one encoder.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cluster: ClusterReport,
    pub probe: ProbeReport,
    /// Eval-mode embeddings of the whole test batch, `B×T×d`.
    pub test_embeddings: Tensor,
}

fn embed_steps(params: &EncoderParams, enc: &EncoderConfig, set: &EvalSet) -> Result<Tensor, EvalError> {
    Ok(embed(params, enc, &set.features)?)
}

/// Clusters a class-balanced subset of the test steps and scores a linear
/// probe fit on every train step against every test step. The encoder runs
/// in eval mode throughout.
pub fn evaluate(
    params: &EncoderParams,
    enc: &EncoderConfig,
    train: &SequenceBatch,
    test: &SequenceBatch,
    spec: &EvalSpec,
    seed: u64,
) -> Result<Evaluation, EvalError> {
    let test_labels = test
        .labels()
        .ok_or_else(|| EvalError::Domain("test batch carries no labels".into()))?;
    let mut hist: BTreeMap<Label, usize> = BTreeMap::new();
    for &l in test_labels {
        *hist.entry(l).or_default() += 1;
    }
    let k = hist.len();
    if let Some(want) = spec.k {
        if want != k {
            return Err(EvalError::Config(format!("k = {want} but the test set has {k} classes")));
        }
    }
    if k < 2 {
        return Err(EvalError::Domain(format!("test set has {k} class(es); clustering needs 2")));
    }
    let rarest = *hist.values().min().expect("k >= 2");
    let per_class = spec.per_class.unwrap_or(rarest.min(spec.max_per_class));
    let counts: BTreeMap<Label, usize> = hist.keys().map(|&c| (c, per_class)).collect();
    let subset = balanced_subset(test, &counts, seed)?;
    let z_subset = embed_steps(params, enc, &subset)?;
    let cluster = cluster_report(&z_subset, &subset.labels, k, spec.assignment, seed, spec.kmeans_max_iters)?;

    let train_set = EvalSet::all_steps(train)?;
    let test_set = EvalSet::all_steps(test)?;
    let z_train = embed_steps(params, enc, &train_set)?;
    let z_test = embed_steps(params, enc, &test_set)?;
    let probe = fit_probe(&z_train, &train_set.labels, &spec.probe)?;
    let pred = probe.predict(&z_test)?;
    let report = classification_metrics(&pred, &test_set.labels)?;
    let test_embeddings = z_test
        .reshape(&[test.batch(), test.seq_len(), enc.output_dim])
        .map_err(EvalError::from)?;
    Ok(Evaluation {
        cluster,
        probe: report,
        test_embeddings,
    })
}

/// Keys every serialized [`EvalReport`] carries.
pub const REPORT_FIELDS: [&str; 13] = [
    "dataset",
    "seed",
    "loss_kind",
    "dbi",
    "silhouette",
    "accuracy",
    "f1_macro",
    "f1_weighted",
    "precision_macro",
    "precision_weighted",
    "recall_macro",
    "recall_weighted",
    "config_digest",
];

/// Flat JSON record of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub loss_kind: String,
    pub assignment: AssignmentSource,
    pub k: usize,
    #[serde(with = "crate::float_serde")]
    pub dbi: f64,
    pub silhouette: f64,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub precision_weighted: f64,
    pub recall_macro: f64,
    pub recall_weighted: f64,
    /// SHA-256 of the canonical JSON of the run configuration.
    pub config_digest: String,
    #[serde(default)]
    pub per_class: Vec<ClassScores>,
}

impl EvalReport {
    pub fn new(dataset: &str, seed: u64, loss_kind: &str, eval: &Evaluation, config_digest: String) -> Self {
        let p = &eval.probe;
        Self {
            dataset: dataset.to_string(),
            seed,
            loss_kind: loss_kind.to_string(),
            assignment: eval.cluster.assignment_source,
            k: eval.cluster.k,
            dbi: eval.cluster.dbi,
            silhouette: eval.cluster.silhouette,
            accuracy: p.accuracy,
            f1_macro: p.macro_avg.f1,
            f1_weighted: p.weighted_avg.f1,
            precision_macro: p.macro_avg.precision,
            precision_weighted: p.weighted_avg.precision,
            recall_macro: p.macro_avg.recall,
            recall_weighted: p.weighted_avg.recall,
            config_digest,
            per_class: p.per_class.clone(),
        }
    }
}

/// Hex SHA-256 of `value`'s JSON encoding.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = config_digest(&EvalSpec::default());
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_digest(&EvalSpec::default()));
        assert_ne!(a, config_digest(&EvalSpec { k: Some(3), ..Default::default() }));
    }

    #[test]
    fn infinite_dbi_round_trips_through_json() {
        let r = ClusterReport {
            dbi: f64::INFINITY,
            silhouette: 0.0,
            k: 2,
            assignment_source: AssignmentSource::Labels,
            seed: 1,
            n: 4,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<ClusterReport>(&s).unwrap(), r);
    }
}
