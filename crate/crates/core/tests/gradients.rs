mod common;

use common::{normal, off_zero, rng, weighted_sum};
use emargin_core::autodiff::{finite_diff_check, AutodiffError, BatchNormMode, BatchNormStats, Graph, Tensor, Var};
use emargin_core::encoder::{forward, EncoderConfig, EncoderParams, Stats};
use emargin_core::loss::{emargin_loss, plain_infonce_loss, LossConfig, LossError, PseudoLabelScope};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check(name: &str, f: impl Fn(&mut Graph, Var) -> Result<Var, AutodiffError>, x: &Tensor) {
    let err = finite_diff_check(f, x, H).unwrap();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

fn loss_err(e: LossError) -> AutodiffError {
    match e {
        LossError::Autodiff(a) => a,
        other => AutodiffError::Contract(other.to_string()),
    }
}

#[test]
fn binary_ops_against_each_operand() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let a = normal(&mut r, &[3, 4]);
        let b = off_zero(&mut r, &[3, 4]);
        let ops: [(&str, fn(&mut Graph, Var, Var) -> Result<Var, AutodiffError>); 4] = [
            ("add", |g, x, y| g.add(x, y)),
            ("sub", |g, x, y| g.sub(x, y)),
            ("mul", |g, x, y| g.mul(x, y)),
            ("div", |g, x, y| g.div(x, y)),
        ];
        for (name, op) in ops {
            check(
                name,
                |g, x| {
                    let y = g.constant(b.clone());
                    let o = op(g, x, y)?;
                    weighted_sum(g, o, seed)
                },
                &a,
            );
            check(
                name,
                |g, y| {
                    let x = g.constant(a.clone());
                    let o = op(g, x, y)?;
                    weighted_sum(g, o, seed)
                },
                &b,
            );
        }
    }
}

#[test]
fn scalar_broadcast_in_binary_ops() {
    let a = normal(&mut rng(9), &[2, 3]);
    let s = Tensor::scalar(1.7);
    check(
        "scalar divisor",
        |g, v| {
            let x = g.constant(a.clone());
            let o = g.div(x, v)?;
            weighted_sum(g, o, 2)
        },
        &s,
    );
    check(
        "scalar addend",
        |g, x| {
            let c = g.constant(Tensor::scalar(-0.3));
            let o = g.add(x, c)?;
            weighted_sum(g, o, 3)
        },
        &a,
    );
}

#[test]
fn matmul_both_sides() {
    let mut r = rng(11);
    let a = normal(&mut r, &[3, 5]);
    let b = normal(&mut r, &[5, 2]);
    check(
        "matmul lhs",
        |g, x| {
            let y = g.constant(b.clone());
            let o = g.matmul(x, y)?;
            weighted_sum(g, o, 1)
        },
        &a,
    );
    check(
        "matmul rhs",
        |g, y| {
            let x = g.constant(a.clone());
            let o = g.matmul(x, y)?;
            weighted_sum(g, o, 1)
        },
        &b,
    );
}

#[test]
fn unary_ops() {
    for seed in 0..5 {
        let x = off_zero(&mut rng(100 + seed), &[4, 3]);
        check("scale", |g, v| { let o = g.scale(v, -2.5)?; weighted_sum(g, o, seed) }, &x);
        check("rsub_scalar", |g, v| { let o = g.rsub_scalar(5.0, v)?; weighted_sum(g, o, seed) }, &x);
        check("square", |g, v| { let o = g.square(v)?; weighted_sum(g, o, seed) }, &x);
        check("relu", |g, v| { let o = g.relu(v); weighted_sum(g, o, seed) }, &x);
        check("clamp_floor_zero", |g, v| { let o = g.clamp_floor_zero(v); weighted_sum(g, o, seed) }, &x);
        check("transpose", |g, v| { let o = g.transpose(v)?; weighted_sum(g, o, seed) }, &x);
        check("reshape", |g, v| { let o = g.reshape(v, &[2, 6])?; weighted_sum(g, o, seed) }, &x);
    }
}

#[test]
fn reductions_over_every_axis() {
    let x = normal(&mut rng(21), &[2, 3, 4]);
    for axis in [None, Some(0), Some(1), Some(2)] {
        check("sum", |g, v| { let o = g.sum(v, axis)?; weighted_sum(g, o, 4) }, &x);
        check("mean", |g, v| { let o = g.mean(v, axis)?; weighted_sum(g, o, 5) }, &x);
    }
    for axis in 0..3 {
        check("log_sum_exp", |g, v| { let o = g.log_sum_exp(v, axis)?; weighted_sum(g, o, 6) }, &x);
    }
}

#[test]
fn gather_normalize_bias() {
    let mut r = rng(31);
    let x = normal(&mut r, &[4, 3]);
    let idx = vec![0, 5, 5, 11, 2];
    check("gather", |g, v| { let o = g.gather(v, idx.clone(), &[5])?; weighted_sum(g, o, 7) }, &x);
    check("normalize_rows", |g, v| { let o = g.normalize_rows(v, 1e-12)?; weighted_sum(g, o, 8) }, &x);
    let bias = normal(&mut r, &[3]);
    check(
        "add_bias input",
        |g, v| {
            let b = g.constant(bias.clone());
            let o = g.add_bias(v, b)?;
            weighted_sum(g, o, 9)
        },
        &x,
    );
    check(
        "add_bias bias",
        |g, b| {
            let v = g.constant(x.clone());
            let o = g.add_bias(v, b)?;
            weighted_sum(g, o, 9)
        },
        &bias,
    );
}

#[test]
fn batchnorm_train_mode_all_inputs() {
    for seed in 0..5 {
        let mut r = rng(40 + seed);
        let x = normal(&mut r, &[4, 3]);
        let gamma = off_zero(&mut r, &[3]);
        let beta = normal(&mut r, &[3]);
        let bn = |g: &mut Graph, x: Var, gm: Var, bt: Var| -> Result<Var, AutodiffError> {
            let mut stats = BatchNormStats::new(3);
            let o = g.batchnorm(x, gm, bt, BatchNormMode::Train { stats: &mut stats, momentum: 0.1 }, 1e-5)?;
            weighted_sum(g, o, seed)
        };
        check("batchnorm x", |g, v| { let gm = g.constant(gamma.clone()); let bt = g.constant(beta.clone()); bn(g, v, gm, bt) }, &x);
        check("batchnorm gamma", |g, v| { let xv = g.constant(x.clone()); let bt = g.constant(beta.clone()); bn(g, xv, v, bt) }, &gamma);
        check("batchnorm beta", |g, v| { let xv = g.constant(x.clone()); let gm = g.constant(gamma.clone()); bn(g, xv, gm, v) }, &beta);
    }
}

#[test]
fn batchnorm_eval_mode() {
    let mut r = rng(50);
    let x = normal(&mut r, &[5, 2]);
    let stats = BatchNormStats {
        running_mean: vec![0.3, -0.2],
        running_var: vec![1.5, 0.7],
    };
    check(
        "batchnorm eval",
        |g, v| {
            let gm = g.constant(Tensor::vector(&[1.2, 0.8]));
            let bt = g.constant(Tensor::vector(&[0.1, 0.0]));
            let o = g.batchnorm(v, gm, bt, BatchNormMode::Eval { stats: &stats }, 1e-5)?;
            weighted_sum(g, o, 1)
        },
        &x,
    );
}

#[test]
fn encoder_parameters() {
    let cfg = EncoderConfig {
        input_dim: 4,
        hidden_dims: [5, 5],
        output_dim: 3,
        ..Default::default()
    };
    let params = EncoderParams::init(&cfg, 2);
    let x = normal(&mut rng(60), &[2, 3, 4]);
    let trainable: Vec<Tensor> = params.trainable().into_iter().cloned().collect();
    for (i, p) in trainable.iter().enumerate() {
        check(
            &format!("encoder param {i}"),
            |g, v| {
                let vars: Vec<Var> = trainable
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == i { v } else { g.constant(t.clone()) })
                    .collect();
                let xv = g.constant(x.clone());
                let mut stats = params.stats.clone();
                let z = forward(g, &cfg, xv, &vars, Stats::Train(&mut stats)).map_err(|e| AutodiffError::Contract(e.to_string()))?;
                weighted_sum(g, z, 3)
            },
            p,
        );
    }
}

#[test]
fn full_emargin_loss_twenty_seeds() {
    for scope in [PseudoLabelScope::Pairwise, PseudoLabelScope::AdjacentOnly] {
        let cfg = LossConfig {
            scope,
            ..Default::default()
        };
        for seed in 1..=20u64 {
            let mut r = rng(seed);
            let x = normal(&mut r, &[1, 6, 4]);
            let z = normal(&mut r, &[1, 6, 8]);
            let err = finite_diff_check(|g, v| emargin_loss(g, &x, v, &cfg).map_err(loss_err), &z, H).unwrap();
            assert!(err < TOL, "{scope:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn plain_infonce_loss_multi_sequence() {
    for seed in 1..=5u64 {
        let z = normal(&mut rng(seed), &[2, 5, 3]);
        let err = finite_diff_check(|g, v| plain_infonce_loss(g, v, 0.5).map_err(loss_err), &z, H).unwrap();
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
