//! Final segmentation: k-means on proportion vectors, spatial relabeling of
//! each cluster into connected segments, then absorption of small segments.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::kmeans::{self, KmeansOptions, KmeansResult};
use crate::labels::{components, neighbors, Connectivity, LabelMap};
use crate::spmlda::ProportionMap;

/// K-means over per-pixel proportion vectors.
pub fn kmeans(
    proportions: &ProportionMap,
    k_final: usize,
    seed: u64,
    restarts: usize,
) -> Result<KmeansResult> {
    let opts = KmeansOptions {
        k: k_final,
        restarts,
        max_iters: 300,
        seed,
    };
    kmeans::kmeans(proportions.values(), proportions.num_endmembers(), &opts)
}

/// Labels each connected run of equal cluster assignments as its own
/// segment, numbered in row-major first-encounter order.
pub fn connected_components(
    assignments: &[u32],
    height: usize,
    width: usize,
    connectivity: Connectivity,
) -> Result<LabelMap> {
    if assignments.len() != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments for a {height}x{width} grid",
            assignments.len()
        )));
    }
    let (comp, _) = components(assignments, height, width, connectivity);
    LabelMap::new(height, width, comp)
}

/// Repeatedly merges the smallest segment below `min_segment` pixels into
/// its largest 4-adjacent neighbour (lowest label on ties) until every
/// segment reaches the threshold or a single segment remains. The output is
/// compacted.
pub fn cleanup(labels: &LabelMap, min_segment: usize) -> Result<LabelMap> {
    if !labels.is_compact() {
        return Err(Error::InvalidParam("cleanup expects compact labels".into()));
    }
    let (h, w) = (labels.height(), labels.width());
    let src = labels.as_slice();
    let mut size = labels.segment_sizes();
    let k = size.len();

    let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); k];
    for idx in 0..h * w {
        for nb in neighbors(idx, h, w, Connectivity::Four) {
            if src[nb] != src[idx] {
                adj[src[idx] as usize].insert(src[nb]);
            }
        }
    }

    let mut parent: Vec<u32> = (0..k as u32).collect();
    let mut queue: BTreeSet<(usize, u32)> = (0..k).map(|l| (size[l], l as u32)).collect();

    while queue.len() > 1 {
        let &(s, small) = queue.first().expect("non-empty");
        if s >= min_segment {
            break;
        }
        let target = adj[small as usize]
            .iter()
            .copied()
            .max_by(|&a, &b| size[a as usize].cmp(&size[b as usize]).then(b.cmp(&a)));
        let Some(target) = target else { break };

        queue.remove(&(s, small));
        queue.remove(&(size[target as usize], target));
        size[target as usize] += s;
        size[small as usize] = 0;
        queue.insert((size[target as usize], target));
        parent[small as usize] = target;

        let moved = std::mem::take(&mut adj[small as usize]);
        for nb in moved {
            adj[nb as usize].remove(&small);
            if nb != target {
                adj[nb as usize].insert(target);
                adj[target as usize].insert(nb);
            }
        }
        adj[target as usize].remove(&small);
    }

    let mut resolved: BTreeMap<u32, u32> = BTreeMap::new();
    let out: Vec<u32> = src
        .iter()
        .map(|&l| {
            *resolved.entry(l).or_insert_with(|| {
                let mut r = l;
                while parent[r as usize] != r {
                    r = parent[r as usize];
                }
                r
            })
        })
        .collect();
    Ok(LabelMap::new(h, w, out)?.compacted())
}
