use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frames, Label, SignalError, WindowFn};
use crate::autodiff::Tensor;

/// Provenance carried alongside a [`SequenceBatch`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    /// One id per sequence naming the series it was cut from.
    pub source_ids: Vec<String>,
    pub window: Option<usize>,
    pub hop: Option<usize>,
    pub window_fn: Option<WindowFn>,
    pub class_map: BTreeMap<Label, String>,
}

/// `B × T × D` feature sequences with optional per-step labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    batch: usize,
    seq_len: usize,
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<Label>>,
    pub meta: BatchMeta,
}

impl SequenceBatch {
    pub fn new(
        batch: usize,
        seq_len: usize,
        dim: usize,
        data: Vec<f64>,
        labels: Option<Vec<Label>>,
        meta: BatchMeta,
    ) -> Result<Self, SignalError> {
        if seq_len < 2 {
            return Err(SignalError::Domain(format!("sequence length {seq_len} < 2")));
        }
        if data.len() != batch * seq_len * dim {
            return Err(SignalError::Domain(format!(
                "{} values for {batch}×{seq_len}×{dim}",
                data.len()
            )));
        }
        if labels.as_ref().is_some_and(|l| l.len() != batch * seq_len) {
            return Err(SignalError::Domain("label count does not match B×T".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::Domain(format!("non-finite feature at flat index {i}")));
        }
        if !meta.source_ids.is_empty() && meta.source_ids.len() != batch {
            return Err(SignalError::Domain("source_ids must have one entry per sequence".into()));
        }
        Ok(Self {
            batch,
            seq_len,
            dim,
            data,
            labels,
            meta,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// Total number of timesteps, `B·T`.
    pub fn num_steps(&self) -> usize {
        self.batch * self.seq_len
    }

    /// The `T·D` values of sequence `b`.
    pub fn sequence(&self, b: usize) -> &[f64] {
        let n = self.seq_len * self.dim;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sequence_labels(&self, b: usize) -> Option<&[Label]> {
        self.labels
            .as_ref()
            .map(|l| &l[b * self.seq_len..(b + 1) * self.seq_len])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.batch, self.seq_len, self.dim], self.data.clone())
            .expect("batch data length is validated on construction")
    }

    /// Sequences at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let mut data = Vec::with_capacity(indices.len() * self.seq_len * self.dim);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(indices.len() * self.seq_len));
        let mut ids = Vec::new();
        for &b in indices {
            data.extend_from_slice(self.sequence(b));
            if let (Some(out), Some(src)) = (labels.as_mut(), self.sequence_labels(b)) {
                out.extend_from_slice(src);
            }
            if let Some(id) = self.meta.source_ids.get(b) {
                ids.push(id.clone());
            }
        }
        SequenceBatch {
            batch: indices.len(),
            seq_len: self.seq_len,
            dim: self.dim,
            data,
            labels,
            meta: BatchMeta {
                source_ids: ids,
                ..self.meta.clone()
            },
        }
    }

    /// Stacks batches with equal `T` and `D`. Labels survive only if every
    /// part carries them.
    pub fn concat(parts: &[SequenceBatch]) -> Result<SequenceBatch, SignalError> {
        let first = parts
            .first()
            .ok_or_else(|| SignalError::Domain("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Some(Vec::new());
        let mut meta = BatchMeta {
            source_ids: Vec::new(),
            ..first.meta.clone()
        };
        let mut batch = 0;
        for p in parts {
            if p.seq_len != first.seq_len || p.dim != first.dim {
                return Err(SignalError::Domain(format!(
                    "cannot stack {}×{} with {}×{}",
                    p.seq_len, p.dim, first.seq_len, first.dim
                )));
            }
            data.extend_from_slice(&p.data);
            match (&mut labels, &p.labels) {
                (Some(out), Some(src)) => out.extend_from_slice(src),
                _ => labels = None,
            }
            meta.source_ids.extend(p.meta.source_ids.iter().cloned());
            meta.class_map.extend(p.meta.class_map.clone());
            batch += p.batch;
        }
        if meta.source_ids.len() != batch {
            meta.source_ids.clear();
        }
        SequenceBatch::new(batch, first.seq_len, first.dim, data, labels, meta)
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<Label> {
        let mut c: Vec<Label> = self.labels.iter().flatten().copied().collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Cuts frames into non-overlapping runs of `seq_len`; the remainder is
/// dropped.
pub fn window_sequences(frames: &Frames, seq_len: usize, source_id: &str) -> Result<SequenceBatch, SignalError> {
    if frames.n_frames < seq_len {
        return Err(SignalError::Domain(format!(
            "{} frames cannot fill a sequence of length {seq_len}",
            frames.n_frames
        )));
    }
    let batch = frames.n_frames / seq_len;
    let used = batch * seq_len;
    let data = frames.data[..used * frames.dim].to_vec();
    let labels = frames.labels.as_ref().map(|l| l[..used].to_vec());
    let meta = BatchMeta {
        source_ids: (0..batch).map(|_| source_id.to_string()).collect(),
        window: Some(frames.config.window),
        hop: Some(frames.config.hop),
        window_fn: Some(frames.config.window_fn),
        class_map: labels
            .iter()
            .flatten()
            .map(|&l| (l, l.to_string()))
            .collect(),
    };
    SequenceBatch::new(batch, seq_len, frames.dim, data, labels, meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 1,
        }
    }
}

/// Seeded shuffle, then `floor(fraction · B)` sequences to train (kept in
/// `[1, B-1]`) and the rest to test.
pub fn split(batch: &SequenceBatch, spec: &SplitSpec) -> Result<(SequenceBatch, SequenceBatch), SignalError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SignalError::Domain(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n = batch.batch();
    if n < 2 {
        return Err(SignalError::Domain(format!("split needs at least 2 sequences, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((spec.train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    Ok((batch.select(&order[..n_train]), batch.select(&order[n_train..])))
}

/// Individual timesteps drawn from a batch for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    /// `n × D` step features.
    pub features: Tensor,
    pub labels: Vec<Label>,
    /// `(sequence, t)` of each step.
    pub origin: Vec<(usize, usize)>,
}

impl EvalSet {
    /// Every step of a labelled batch, in order.
    pub fn all_steps(batch: &SequenceBatch) -> Result<EvalSet, SignalError> {
        let labels = batch
            .labels()
            .ok_or_else(|| SignalError::Domain("batch carries no labels".into()))?
            .to_vec();
        let origin = (0..batch.batch())
            .flat_map(|b| (0..batch.seq_len()).map(move |t| (b, t)))
            .collect();
        let features = Tensor::new(vec![batch.num_steps(), batch.dim()], batch.data().to_vec())
            .expect("batch data length is validated on construction");
        Ok(EvalSet {
            features,
            labels,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Samples `counts[class]` steps per class without replacement.
pub fn balanced_subset(
    batch: &SequenceBatch,
    counts: &BTreeMap<Label, usize>,
    seed: u64,
) -> Result<EvalSet, SignalError> {
    let labels = batch
        .labels()
        .ok_or_else(|| SignalError::Domain("balanced subset needs labels".into()))?;
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = batch.dim();
    let mut features = Vec::new();
    let mut out_labels = Vec::new();
    let mut origin = Vec::new();
    for (&class, &want) in counts {
        let pool = by_class.get(&class).map_or(&[][..], Vec::as_slice);
        if pool.len() < want {
            return Err(SignalError::InsufficientClass {
                class,
                requested: want,
                available: pool.len(),
            });
        }
        for k in rand::seq::index::sample(&mut rng, pool.len(), want).into_iter() {
            let step = pool[k];
            features.extend_from_slice(&batch.data()[step * d..(step + 1) * d]);
            out_labels.push(class);
            origin.push((step / batch.seq_len(), step % batch.seq_len()));
        }
    }
    let n = out_labels.len();
    Ok(EvalSet {
        features: Tensor::new(vec![n, d], features).expect("sized by construction"),
        labels: out_labels,
        origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StftConfig;

    fn frames(n: usize, dim: usize, labels: Option<Vec<Label>>) -> Frames {
        Frames {
            n_frames: n,
            dim,
            data: (0..n * dim).map(|i| i as f64).collect(),
            labels,
            config: StftConfig::default(),
        }
    }

    fn numbered(batch: usize) -> SequenceBatch {
        let f = frames(batch * 3, 1, Some((0..batch * 3).map(|i| (i % 2) as Label).collect()));
        window_sequences(&f, 3, "s").unwrap()
    }

    #[test]
    fn windowing_drops_remainder() {
        let b = window_sequences(&frames(250, 2, None), 119, "a").unwrap();
        assert_eq!(b.batch(), 2);
        assert_eq!(b.num_steps(), 238);
        assert_eq!(b.sequence(1)[0], (119 * 2) as f64);

        let one = window_sequences(&frames(119, 2, None), 119, "a").unwrap();
        assert_eq!(one.batch(), 1);

        assert!(window_sequences(&frames(100, 2, None), 119, "a").is_err());
    }

    #[test]
    fn constant_labels_survive_windowing() {
        let b = window_sequences(&frames(10, 1, Some(vec![3; 10])), 5, "a").unwrap();
        assert!(b.labels().unwrap().iter().all(|&l| l == 3));
    }

    #[test]
    fn concatenation_keeps_series_apart() {
        let a = window_sequences(&frames(7, 1, None), 3, "a").unwrap();
        let b = window_sequences(&frames(5, 1, None), 3, "b").unwrap();
        let both = SequenceBatch::concat(&[a, b]).unwrap();
        assert_eq!(both.batch(), 3);
        assert_eq!(both.meta.source_ids, vec!["a", "a", "b"]);
        // third sequence starts at frame 0 of series b, not frame 6 of a
        assert_eq!(both.sequence(2), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let b = numbered(10);
        let spec = SplitSpec { train_fraction: 0.8, seed: 1 };
        let (tr, te) = split(&b, &spec).unwrap();
        assert_eq!((tr.batch(), te.batch()), (8, 2));
        let (tr2, te2) = split(&b, &spec).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);

        let (tr, te) = split(&numbered(11), &SplitSpec { train_fraction: 0.5, seed: 1 }).unwrap();
        assert_eq!((tr.batch(), te.batch()), (5, 6));

        assert!(split(&numbered(1), &spec).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let b = numbered(9);
        let (tr, te) = split(&b, &SplitSpec { train_fraction: 0.5, seed: 7 }).unwrap();
        let mut firsts: Vec<f64> = (0..tr.batch())
            .map(|i| tr.sequence(i)[0])
            .chain((0..te.batch()).map(|i| te.sequence(i)[0]))
            .collect();
        firsts.sort_by(f64::total_cmp);
        assert_eq!(firsts, (0..9).map(|i| (i * 3) as f64).collect::<Vec<_>>());
    }

    #[test]
    fn balanced_subset_counts() {
        let labels: Vec<Label> = (0..20).map(|i| (i / 10) as Label).collect();
        let f = frames(20, 2, Some(labels));
        let b = window_sequences(&f, 4, "a").unwrap();
        let counts = BTreeMap::from([(0, 2), (1, 2)]);
        let set = balanced_subset(&b, &counts, 3).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.labels, vec![0, 0, 1, 1]);
        assert_eq!(set, balanced_subset(&b, &counts, 3).unwrap());
        for (i, &(s, t)) in set.origin.iter().enumerate() {
            let step = s * 4 + t;
            assert_eq!(set.features.row(i), &b.data()[step * 2..step * 2 + 2]);
        }

        let too_many = BTreeMap::from([(1, 11)]);
        match balanced_subset(&b, &too_many, 3) {
            Err(SignalError::InsufficientClass { class, available, .. }) => {
                assert_eq!((class, available), (1, 10));
            }
            other => panic!("{other:?}"),
        }
    }
}
