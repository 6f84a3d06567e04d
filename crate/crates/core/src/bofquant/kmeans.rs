//! Lloyd's k-means for codebook initialization.
//!
//! Seeding is farthest-point: the first center is a seeded uniform draw, each
//! further center is the point farthest from its nearest chosen center (ties
//! to the lowest index). Iteration stops when assignments are stable, when
//! the objective improves by less than `rel_tol` relatively, or after
//! `max_iters` rounds. A cluster that empties is re-seeded from the point
//! farthest from its assigned center.

use rand::Rng;
use rayon::prelude::*;

use super::{BofError, Codebook};
use crate::seed;
use crate::tensorio::FeatureVectorSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 300, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `K×C`, row-major.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` initial centers chosen by seeded farthest-point
/// traversal.
pub fn farthest_point_seeds(vectors: &FeatureVectorSet, k: usize, seed: u64) -> Result<Vec<usize>, BofError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(BofError::TooFewVectors { k, available: n });
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::KMEANS]));
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut is_chosen = vec![false; n];
    is_chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(vectors.vector(i), vectors.vector(first)))
        .collect();
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = -1.0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > best_d && !is_chosen[i] {
                best = Some(i);
                best_d = d;
            }
        }
        // k ≤ n guarantees an unchosen index exists
        let next = best.expect("unchosen point");
        chosen.push(next);
        is_chosen[next] = true;
        let c = vectors.vector(next);
        nearest.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(sq_dist(vectors.vector(i), c));
        });
    }
    Ok(chosen)
}

fn assign(vectors: &FeatureVectorSet, centers: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let dim = vectors.dim();
    (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            let v = vectors.vector(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = sq_dist(v, &centers[j * dim..(j + 1) * dim]);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            (best, best_d)
        })
        .unzip()
}

fn update(vectors: &FeatureVectorSet, assignments: &[usize], dist: &[f64], centers: &mut [f64], k: usize) {
    let dim = vectors.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(vectors.vector(i)) {
            *s += v;
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    for j in 0..k {
        let dst = &mut centers[j * dim..(j + 1) * dim];
        if counts[j] > 0 {
            for (c, s) in dst.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                *c = s / counts[j] as f64;
            }
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &d) in dist.iter().enumerate() {
            if d > far_d && !taken.contains(&i) {
                far = Some(i);
                far_d = d;
            }
        }
        if let Some(i) = far {
            taken.push(i);
            dst.copy_from_slice(vectors.vector(i));
        }
    }
}

/// Runs seeded Lloyd iterations from [`farthest_point_seeds`].
pub fn kmeans(vectors: &FeatureVectorSet, k: usize, seed: u64, cfg: KMeansConfig) -> Result<KMeansResult, BofError> {
    let seeds = farthest_point_seeds(vectors, k, seed)?;
    let mut centers: Vec<f64> = seeds.iter().flat_map(|&i| vectors.vector(i).iter().copied()).collect();
    let mut assignments: Vec<usize> = Vec::new();
    let mut objective_trace = Vec::new();
    for iter in 0..cfg.max_iters.max(1) {
        let (next, dist) = assign(vectors, &centers, k);
        let objective: f64 = dist.iter().sum();
        let stable = next == assignments;
        let converged = objective_trace
            .last()
            .is_some_and(|&prev: &f64| prev - objective <= cfg.rel_tol * prev);
        objective_trace.push(objective);
        assignments = next;
        update(vectors, &assignments, &dist, &mut centers, k);
        if stable || converged || iter + 1 == cfg.max_iters {
            break;
        }
    }
    Ok(KMeansResult { centers, assignments, objective_trace })
}

/// Builds a codebook from pooled training features: k-means centers with
/// every width set to the mean pairwise distance between centers.
///
/// With a single center (or all centers coincident) the width falls back to
/// the root-mean-square distance of the vectors to their center, then to 1.
pub fn init_codebook(vectors: &FeatureVectorSet, k: usize, seed: u64) -> Result<Codebook, BofError> {
    let result = kmeans(vectors, k, seed, KMeansConfig::default())?;
    let dim = vectors.dim();
    let center = |j: usize| &result.centers[j * dim..(j + 1) * dim];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            total += sq_dist(center(a), center(b)).sqrt();
            pairs += 1;
        }
    }
    let usable = |w: f64| w.is_finite() && w > 0.0;
    let mut width = if pairs > 0 { total / pairs as f64 } else { 0.0 };
    if !usable(width) {
        width = (result.objective() / vectors.len() as f64).sqrt();
    }
    if !usable(width) {
        width = 1.0;
    }
    Codebook::new(dim, result.centers, vec![width; k])
}
