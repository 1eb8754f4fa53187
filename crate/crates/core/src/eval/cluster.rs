use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::autodiff::Tensor;

fn points(x: &Tensor) -> Result<(usize, usize), EvalError> {
    match x.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(EvalError::Dimension(format!("expected n×d points, got {s:?}"))),
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k × d`
    pub centroids: Tensor,
    /// Inertia after each assignment pass.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn final_inertia(&self) -> f64 {
        *self.inertia.last().expect("at least one pass")
    }
}

/// k-means++ seeding followed by Lloyd passes until the assignment stops
/// changing or `max_iters` passes have run. A cluster left empty is moved to
/// the point farthest from its current centroid.
pub fn kmeans(x: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult, EvalError> {
    let (n, d) = points(x)?;
    if k < 1 || n < k {
        return Err(EvalError::Domain(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if max_iters == 0 {
        return Err(EvalError::Domain("max_iters must be positive".into()));
    }
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(row(i), row(pick)));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (best, best_d) = (0..k)
                .map(|c| (c, sq_dist(row(i), &centroids[c * d..(c + 1) * d])))
                .fold((0, f64::INFINITY), |acc, (c, dc)| if dc < acc.1 { (c, dc) } else { acc });
            total += best_d;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        inertia.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| {
                        let a = assignments[i];
                        (i, sq_dist(row(i), &centroids[a * d..(a + 1) * d]))
                    })
                    .fold((0, -1.0), |acc, (i, di)| if di > acc.1 { (i, di) } else { acc })
                    .0;
                let p = row(far).to_vec();
                centroids[c * d..(c + 1) * d].copy_from_slice(&p);
                log::debug!("k-means: empty cluster {c} re-seeded at point {far}");
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids: Tensor::new(vec![k, d], centroids).expect("k×d"),
        inertia,
        iterations,
    })
}

/// Groups point indices by cluster id, ids in ascending order.
fn groups(assignments: &[usize]) -> Vec<Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in assignments.iter().enumerate() {
        m.entry(a).or_default().push(i);
    }
    m.into_values().collect()
}

fn check_partition(x: &Tensor, assignments: &[usize]) -> Result<(usize, Vec<Vec<usize>>), EvalError> {
    let (n, d) = points(x)?;
    if assignments.len() != n {
        return Err(EvalError::Dimension(format!("{} assignments for {n} points", assignments.len())));
    }
    let g = groups(assignments);
    if g.len() < 2 {
        return Err(EvalError::Domain(format!("need at least 2 clusters, got {}", g.len())));
    }
    Ok((d, g))
}

/// Davies-Bouldin index: mean over clusters of the worst
/// `(S_i + S_j) / ||c_i - c_j||`, with `S` the mean distance to the centroid.
/// Coincident centroids make the ratio unbounded and yield `+inf`.
pub fn davies_bouldin(x: &Tensor, assignments: &[usize]) -> Result<f64, EvalError> {
    let (d, groups) = check_partition(x, assignments)?;
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let centroids: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut c = vec![0.0; d];
            for &i in g {
                c.iter_mut().zip(row(i)).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= g.len() as f64);
            c
        })
        .collect();
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&centroids)
        .map(|(g, c)| g.iter().map(|&i| dist(row(i), c)).sum::<f64>() / g.len() as f64)
        .collect();
    let k = groups.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = dist(&centroids[i], &centroids[j]);
            let r = if m > 0.0 {
                (scatter[i] + scatter[j]) / m
            } else {
                log::warn!("Davies-Bouldin: clusters {i} and {j} share a centroid; index is unbounded");
                f64::INFINITY
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Mean silhouette `(b - a) / max(a, b)` over all points. Points in singleton
/// clusters score 0; `a = 0 < b` scores 1.
pub fn silhouette(x: &Tensor, assignments: &[usize]) -> Result<f64, EvalError> {
    let (d, groups) = check_partition(x, assignments)?;
    let data = x.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut cluster_of = vec![0usize; assignments.len()];
    for (c, g) in groups.iter().enumerate() {
        for &i in g {
            cluster_of[i] = c;
        }
    }
    let scores: Vec<f64> = (0..assignments.len())
        .into_par_iter()
        .map(|i| {
            let own = cluster_of[i];
            if groups[own].len() == 1 {
                return 0.0;
            }
            let mean_to = |g: &[usize]| g.iter().map(|&j| dist(row(i), row(j))).sum::<f64>();
            let a = mean_to(&groups[own]) / (groups[own].len() - 1) as f64;
            let b = groups
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != own)
                .map(|(_, g)| mean_to(g) / g.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
