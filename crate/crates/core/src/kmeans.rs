//! Lloyd's k-means with k-means++ seeding over row-major point sets.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hslic::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansOptions {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KmeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iters: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    /// Summed squared distance of points to their centroids.
    pub objective: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
}

/// Counts distinct rows, stopping early once `limit` is reached.
pub fn count_distinct(data: &[f64], dim: usize, limit: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in data.chunks_exact(dim) {
        // +0.0 and -0.0 compare equal
        seen.insert(row.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding: first centroid uniform, the rest drawn with
/// probability proportional to squared distance from the nearest chosen one.
pub fn plus_plus_seeds<R: Rng>(data: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = vec![row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.random_range(0..n),
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(data: &[f64], dim: usize, centroids: &[Vec<f64>]) -> Vec<(u32, f64)> {
    data.par_chunks(dim)
        .map(|x| {
            let mut best = (0u32, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(x, c);
                if d < best.1 {
                    best = (j as u32, d);
                }
            }
            best
        })
        .collect()
}

fn objective(data: &[f64], dim: usize, assignments: &[u32], centroids: &[Vec<f64>]) -> f64 {
    data.chunks_exact(dim)
        .zip(assignments)
        .map(|(x, &a)| sq_dist(x, &centroids[a as usize]))
        .sum()
}

/// One Lloyd run from the given seeds.
pub fn lloyd(
    data: &[f64],
    dim: usize,
    mut centroids: Vec<Vec<f64>>,
    max_iters: usize,
) -> KmeansResult {
    let k = centroids.len();
    let n = data.len() / dim;
    let mut assignments: Vec<u32> = vec![u32::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        let assigned = assign(data, dim, &centroids);
        let changed = assigned
            .iter()
            .zip(&assignments)
            .any(|(&(a, _), &old)| a != old);
        if !changed {
            break;
        }
        for (slot, &(a, _)) in assignments.iter_mut().zip(&assigned) {
            *slot = a;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.chunks_exact(dim).zip(&assignments) {
            counts[a as usize] += 1;
            for (s, v) in sums[a as usize].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / c).collect();
            }
        }

        // re-seed empty clusters from the points farthest from their centroid
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<(f64, usize)> = data
                .chunks_exact(dim)
                .zip(&assignments)
                .enumerate()
                .filter(|(_, (_, &a))| counts[a as usize] > 1)
                .map(|(i, (x, &a))| (sq_dist(x, &centroids[a as usize]), i))
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut candidates = far.into_iter();
            for &j in &empty {
                let Some(i) = candidates.by_ref().map(|(_, i)| i).find(|&i| {
                    counts[assignments[i] as usize] > 1
                }) else {
                    break;
                };
                counts[assignments[i] as usize] -= 1;
                counts[j] = 1;
                assignments[i] = j as u32;
                centroids[j] = data[i * dim..(i + 1) * dim].to_vec();
            }
        }
        trace.push(objective(data, dim, &assignments, &centroids));
    }
    if trace.is_empty() {
        trace.push(objective(data, dim, &assignments, &centroids));
    }
    KmeansResult {
        objective: *trace.last().unwrap(),
        assignments,
        centroids,
        trace,
    }
}

/// Best-of-`restarts` k-means over `n` points of dimension `dim` stored
/// row-major in `data`.
pub fn kmeans(data: &[f64], dim: usize, opts: &KmeansOptions) -> Result<KmeansResult> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(Error::InvalidParam("k-means needs a non-empty n×dim point set".into()));
    }
    if opts.k == 0 {
        return Err(Error::InvalidParam("k-means needs k >= 1".into()));
    }
    let distinct = count_distinct(data, dim, opts.k);
    if distinct < opts.k {
        return Err(Error::InvalidParam(format!(
            "k = {} exceeds the number of distinct points ({distinct})",
            opts.k
        )));
    }
    let mut best: Option<KmeansResult> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(restart as u64);
        let seeds = plus_plus_seeds(data, dim, opts.k, &mut rng);
        let run = lloyd(data, dim, seeds, opts.max_iters);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
