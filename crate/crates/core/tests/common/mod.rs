//! Independent reference implementations used as test oracles.
//!
//! Everything here is written for clarity rather than speed and shares no
//! code with the library beyond its public data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn clusters(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        out.entry(l).or_default().push(i);
    }
    out
}

fn point(data: &[f64], dim: usize, i: usize) -> &[f64] {
    &data[i * dim..(i + 1) * dim]
}

/// Dunn index straight from the definition: the smallest distance between
/// points of different clusters over the largest within-cluster distance.
pub fn dunn(data: &[f64], dim: usize, labels: &[u32]) -> f64 {
    let groups: Vec<Vec<usize>> = clusters(labels).into_values().collect();
    let mut min_sep = f64::INFINITY;
    for a in 0..groups.len() {
        for b in 0..groups.len() {
            if a == b {
                continue;
            }
            for &i in &groups[a] {
                for &j in &groups[b] {
                    min_sep = min_sep.min(euclid(point(data, dim, i), point(data, dim, j)));
                }
            }
        }
    }
    let mut max_diam: f64 = 0.0;
    for g in &groups {
        for &i in g {
            for &j in g {
                max_diam = max_diam.max(euclid(point(data, dim, i), point(data, dim, j)));
            }
        }
    }
    min_sep / max_diam
}

fn centroid(data: &[f64], dim: usize, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for &i in members {
        for d in 0..dim {
            c[d] += data[i * dim + d];
        }
    }
    c.iter().map(|v| v / members.len() as f64).collect()
}

pub fn davies_bouldin(data: &[f64], dim: usize, labels: &[u32]) -> f64 {
    let groups: Vec<Vec<usize>> = clusters(labels).into_values().collect();
    let cents: Vec<Vec<f64>> = groups.iter().map(|g| centroid(data, dim, g)).collect();
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&cents)
        .map(|(g, c)| g.iter().map(|&i| euclid(point(data, dim, i), c)).sum::<f64>() / g.len() as f64)
        .collect();
    let k = groups.len();
    let mut total = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| (scatter[i] + scatter[j]) / euclid(&cents[i], &cents[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        total += worst;
    }
    total / k as f64
}

pub fn silhouette(data: &[f64], dim: usize, labels: &[u32]) -> f64 {
    let groups = clusters(labels);
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = &groups[&labels[i]];
        if own.len() < 2 {
            continue;
        }
        let mean_to = |members: &[usize]| {
            let others: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
            others
                .iter()
                .map(|&j| euclid(point(data, dim, i), point(data, dim, j)))
                .sum::<f64>()
                / others.len() as f64
        };
        let a = mean_to(own);
        let b = groups
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, m)| mean_to(m))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Breadth-first flood fill; components numbered in row-major order of
/// their first pixel.
pub fn flood_fill(values: &[u32], height: usize, width: usize) -> Vec<u32> {
    let mut out = vec![u32::MAX; values.len()];
    let mut next = 0;
    for start in 0..values.len() {
        if out[start] != u32::MAX {
            continue;
        }
        out[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let q = nr as usize * width + nc as usize;
                if out[q] == u32::MAX && values[q] == values[p] {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    out
}

/// Crossing-number test of a point against a set of rings (even-odd rule).
pub fn point_in_rings(px: f64, py: f64, rings: &[Vec<(f64, f64)>]) -> bool {
    let mut crossings = 0;
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let (x1, y1) = ring[i];
            let (x2, y2) = ring[(i + 1) % n];
            if (y1 > py) == (y2 > py) {
                continue;
            }
            let t = (py - y1) / (y2 - y1);
            if px < x1 + t * (x2 - x1) {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// Expected merge: two input superpixels end up together iff they are
/// linked by a chain of "overlap a common polygon" relations. Computed as a
/// boolean transitive closure.
pub fn merge_closure(labels: &[u32], mask: &[Option<u32>]) -> Vec<Vec<bool>> {
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut touches: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (&l, id) in labels.iter().zip(mask) {
        if let Some(id) = id {
            touches.entry(*id).or_default().insert(l as usize);
        }
    }
    let mut rel = vec![vec![false; k]; k];
    for (i, row) in rel.iter_mut().enumerate() {
        row[i] = true;
    }
    for set in touches.values() {
        for &a in set {
            for &b in set {
                rel[a][b] = true;
            }
        }
    }
    for via in 0..k {
        for a in 0..k {
            if !rel[a][via] {
                continue;
            }
            for b in 0..k {
                if rel[via][b] {
                    rel[a][b] = true;
                }
            }
        }
    }
    rel
}

/// Direct, quadratic restatement of the small-segment cleanup rule:
/// repeatedly take the smallest segment (lowest label on ties) under the
/// threshold and relabel it to its largest 4-adjacent neighbour (lowest
/// label on ties).
pub fn cleanup_reference(labels: &[u32], height: usize, width: usize, min_segment: usize) -> Vec<u32> {
    let mut cur = labels.to_vec();
    loop {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &cur {
            *sizes.entry(l).or_default() += 1;
        }
        if sizes.len() <= 1 {
            break;
        }
        let Some((&small, _)) = sizes
            .iter()
            .filter(|(_, &s)| s < min_segment)
            .min_by_key(|(&l, &s)| (s, l))
        else {
            break;
        };
        let mut nbrs = BTreeSet::new();
        for r in 0..height {
            for c in 0..width {
                let p = r * width + c;
                if cur[p] != small {
                    continue;
                }
                let mut around = Vec::new();
                if r > 0 {
                    around.push(p - width);
                }
                if r + 1 < height {
                    around.push(p + width);
                }
                if c > 0 {
                    around.push(p - 1);
                }
                if c + 1 < width {
                    around.push(p + 1);
                }
                for q in around {
                    if cur[q] != small {
                        nbrs.insert(cur[q]);
                    }
                }
            }
        }
        let target = *nbrs
            .iter()
            .max_by_key(|&&l| (sizes[&l], std::cmp::Reverse(l)))
            .expect("a segment of a multi-segment grid has a neighbour");
        for v in cur.iter_mut() {
            if *v == small {
                *v = target;
            }
        }
    }
    compact(&cur)
}

/// Renumbers labels in row-major first-encounter order.
pub fn compact(labels: &[u32]) -> Vec<u32> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Two labelings describe the same partition.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len() && compact(a) == compact(b)
}

/// Random labels `0..k` on a grid, every label present.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<u32> {
    let mut v: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    for (l, slot) in v.iter_mut().take(k).enumerate() {
        *slot = l as u32;
    }
    v
}

/// Random blocky labels built from a coarse grid of random cells, so that
/// segments are spatially coherent like real superpixels.
pub fn blocky_labels(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: usize, k: usize) -> Vec<u32> {
    let gw = width.div_ceil(cell);
    let gh = height.div_ceil(cell);
    let coarse: Vec<u32> = (0..gw * gh).map(|_| rng.random_range(0..k as u32)).collect();
    (0..height * width)
        .map(|i| coarse[(i / width / cell) * gw + (i % width) / cell])
        .collect()
}
