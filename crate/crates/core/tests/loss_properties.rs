mod common;

use common::{normal, rng};
use emargin_core::autodiff::{Graph, Tensor};
use emargin_core::loss::{
    emargin_loss, infonce_term, infonce_terms, margin_transform, margin_value, pairwise_cosine_matrix, plain_infonce_loss,
    pseudo_labels, cosine_sim, LossConfig, PairLabel, PseudoLabelMatrix, PseudoLabelScope, SimilarityTransform,
};
use emargin_core::signal::{synth_regimes, SynthSpec};
use proptest::prelude::*;

fn transform_one(m: f64, label: PairLabel, margin: f64) -> (f64, f64) {
    let mut g = Graph::new();
    let mv = g.param(Tensor::new(vec![1, 1], vec![m]).unwrap());
    let labels = PseudoLabelMatrix::from_labels(1, PseudoLabelScope::Pairwise, vec![label]).unwrap();
    let out = margin_transform(&mut g, mv, &labels, margin).unwrap();
    let s = g.sum(out, None).unwrap();
    let grad = g.backward(s).unwrap().get(mv).unwrap().item();
    (g.value(out).item(), grad)
}

#[test]
fn branch_grid_is_exact() {
    for margin in [1.0, 5.0] {
        for m in [-1.0, -0.5, 0.0, 0.2, 0.4, 0.8, 1.0] {
            let (sim, _) = transform_one(m, PairLabel::Similar, margin);
            assert!((sim - 0.5 * m * m).abs() <= 1e-15);
            let (dis, _) = transform_one(m, PairLabel::Dissimilar, margin);
            let h = f64::max(0.0, margin - m);
            assert!((dis - 0.5 * h * h).abs() <= 1e-15);
        }
    }
    assert_eq!(transform_one(1.0, PairLabel::Dissimilar, 1.0).0, 0.0);
    assert_eq!(transform_one(0.8, PairLabel::Similar, 5.0).0, 0.32000000000000006);
    assert!((transform_one(0.2, PairLabel::Dissimilar, 5.0).0 - 11.52).abs() < 1e-12);
}

#[test]
fn pairwise_matrix_matches_loop_oracle() {
    let z = normal(&mut rng(3), &[5, 3]);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let m = pairwise_cosine_matrix(&mut g, zv, 1e-12).unwrap();
    let m = g.value(m);
    for i in 0..5 {
        for j in 0..5 {
            let want = cosine_sim(z.row(i), z.row(j), 1e-12).unwrap();
            assert!((m.at(i, j) - want).abs() < 1e-12);
            assert!((m.at(i, j) - m.at(j, i)).abs() < 1e-15);
        }
        assert!((m.at(i, i) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn orthonormal_rows_give_identity() {
    let z = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let mut g = Graph::new();
    let zv = g.constant(z);
    let m = pairwise_cosine_matrix(&mut g, zv, 1e-12).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn uniform_similarity_closed_forms() {
    for t in [4usize, 6, 10] {
        let row = vec![0.37; t];
        let term = infonce_term(&row, 0, 1, 0.1).unwrap();
        assert!((term - ((t - 2) as f64).ln()).abs() < 1e-9);
        let mut g = Graph::new();
        let m = g.constant(Tensor::full(&[t, t], 0.37));
        let terms = infonce_terms(&mut g, m, 0.1).unwrap();
        for &v in g.value(terms).data() {
            assert!((v - ((t - 2) as f64).ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn noiseless_switches_are_exactly_the_dissimilar_adjacent_pairs() {
    let spec = SynthSpec {
        num_seqs: 4,
        seq_len: 80,
        dim: 16,
        noise_sigma: 0.0,
        ..Default::default()
    };
    let b = synth_regimes(&spec, 5).unwrap();
    let cfg = LossConfig {
        scope: PseudoLabelScope::AdjacentOnly,
        ..Default::default()
    };
    for s in 0..b.batch() {
        let y = pseudo_labels(b.sequence(s), b.seq_len(), b.dim(), &cfg).unwrap();
        let l = b.sequence_labels(s).unwrap();
        for t in 0..b.seq_len() - 1 {
            let switch = l[t] != l[t + 1];
            assert_eq!(y.get(t, t + 1) == PairLabel::Dissimilar, switch, "seq {s} t {t}");
        }
    }
}

#[test]
fn identity_transform_equals_plain_infonce() {
    let mut r = rng(8);
    let x = normal(&mut r, &[3, 7, 4]);
    let z = normal(&mut r, &[3, 7, 5]);
    let cfg = LossConfig {
        threshold: f64::NEG_INFINITY,
        transform: SimilarityTransform::Identity,
        temperature: 0.3,
        ..Default::default()
    };
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let a = emargin_loss(&mut g, &x, zv, &cfg).unwrap();
    let b = plain_infonce_loss(&mut g, zv, 0.3).unwrap();
    assert_eq!(g.value(a).item(), g.value(b).item());
}

fn loss_of(x: &Tensor, z: &Tensor, cfg: &LossConfig) -> f64 {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let l = emargin_loss(&mut g, x, zv, cfg).unwrap();
    g.value(l).item()
}

fn permute_batch(t: &Tensor, order: &[usize]) -> Tensor {
    let s = t.shape();
    let per = s[1] * s[2];
    let data = order.iter().flat_map(|&b| t.data()[b * per..(b + 1) * per].to_vec()).collect();
    Tensor::new(s.to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn transform_is_bounded(m in -1.0f64..=1.0, margin in 0.1f64..10.0, dis in any::<bool>()) {
        let label = if dis { PairLabel::Dissimilar } else { PairLabel::Similar };
        let (v, _) = transform_one(m, label, margin);
        prop_assert!(v >= 0.0);
        prop_assert!(v <= f64::max(0.5, 0.5 * (margin + 1.0) * (margin + 1.0)) + 1e-12);
        if m >= 0.0 {
            prop_assert!(v <= f64::max(0.5, 0.5 * margin * margin) + 1e-12);
        }
    }

    #[test]
    fn dissimilar_branch_is_monotone_with_flat_tail(a in -20.0f64..20.0, b in -20.0f64..20.0, margin in 0.1f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(margin_value(hi, true, margin) <= margin_value(lo, true, margin));
        if lo >= margin {
            prop_assert_eq!(margin_value(lo, true, margin), 0.0);
            let (v, grad) = transform_one(lo, PairLabel::Dissimilar, margin);
            prop_assert_eq!(v, 0.0);
            prop_assert_eq!(grad, 0.0);
        }
    }

    #[test]
    fn similar_branch_is_sign_blind(m in -3.0f64..3.0, margin in 0.1f64..10.0) {
        prop_assert_eq!(transform_one(m, PairLabel::Similar, margin).0, transform_one(-m, PairLabel::Similar, margin).0);
    }

    #[test]
    fn batch_permutation_invariance(seed in 0u64..1000, shift in 1usize..4) {
        let mut r = rng(seed);
        let x = normal(&mut r, &[4, 5, 3]);
        let z = normal(&mut r, &[4, 5, 6]);
        let order: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let cfg = LossConfig::default();
        let base = loss_of(&x, &z, &cfg);
        let perm = loss_of(&permute_batch(&x, &order), &permute_batch(&z, &order), &cfg);
        prop_assert!((base - perm).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn lowering_the_positive_raises_its_term(
        row in proptest::collection::vec(-5.0f64..5.0, 6),
        drop in 0.01f64..3.0,
        tau in 0.05f64..2.0,
    ) {
        let before = infonce_term(&row, 2, 3, tau).unwrap();
        let mut lowered = row.clone();
        lowered[3] -= drop;
        prop_assert!(infonce_term(&lowered, 2, 3, tau).unwrap() > before);
    }

    #[test]
    fn temperature_scaling_matches_similarity_scaling(
        row in proptest::collection::vec(-1.0f64..1.0, 7),
        c in 0.2f64..5.0,
    ) {
        let scaled: Vec<f64> = row.iter().map(|v| v * c).collect();
        let a = infonce_term(&scaled, 1, 2, 0.5).unwrap();
        let b = infonce_term(&row, 1, 2, 0.5 / c).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn inactive_hinge_contributes_no_gradient() {
    let mut g = Graph::new();
    let m = g.param(Tensor::new(vec![2, 2], vec![1.0, 6.0, 6.0, 1.0]).unwrap());
    let labels = PseudoLabelMatrix::from_labels(
        2,
        PseudoLabelScope::Pairwise,
        vec![PairLabel::Similar, PairLabel::Dissimilar, PairLabel::Dissimilar, PairLabel::Similar],
    )
    .unwrap();
    let out = margin_transform(&mut g, m, &labels, 5.0).unwrap();
    let s = g.sum(out, None).unwrap();
    let grad = g.backward(s).unwrap();
    assert_eq!(grad.get(m).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
}
