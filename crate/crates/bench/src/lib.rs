//! Shared inputs for the benchmarks.

use emargin_core::autodiff::Tensor;
use emargin_core::signal::{synth_regimes, SequenceBatch, SynthSpec};

pub fn regime_batch(num_seqs: usize, seq_len: usize, dim: usize) -> SequenceBatch {
    let spec = SynthSpec {
        num_seqs,
        seq_len,
        dim,
        ..Default::default()
    };
    synth_regimes(&spec, 7).expect("valid synth spec")
}

/// `n × dim` points drawn from three regimes, with their regime labels.
pub fn labelled_points(n: usize, dim: usize) -> (Tensor, Vec<usize>) {
    let b = regime_batch(1, n, dim);
    let x = Tensor::new(vec![n, dim], b.data().to_vec()).expect("shape matches data");
    let labels = b.labels().expect("synth data is labelled").iter().map(|&l| l as usize).collect();
    (x, labels)
}
