#![allow(dead_code)]

use emargin_core::autodiff::{AutodiffError, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Entries with magnitude in `[0.1, 1.1)` and random sign, clear of kinks at 0.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = 0.1 + rng.random::<f64>();
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ w ⊙ a` with fixed random weights, so every output entry reaches the root.
pub fn weighted_sum(g: &mut Graph, a: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = g.shape(a).to_vec();
    let w = normal(&mut rng(seed ^ 0x5eed), &shape);
    let w = g.constant(w);
    let p = g.mul(a, w)?;
    g.sum(p, None)
}
