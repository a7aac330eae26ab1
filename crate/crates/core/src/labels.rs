//! Label maps and the raster connectivity helpers shared by every stage.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Per-pixel segment assignment for an H×W image, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParam("label map must be non-empty".into()));
        }
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// A map where every pixel carries the same label.
    pub fn uniform(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Number of distinct labels present.
    pub fn num_segments(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// True when labels are exactly `0..K'` with every value present.
    pub fn is_compact(&self) -> bool {
        let max = match self.labels.iter().max() {
            Some(&m) => m as usize,
            None => return true,
        };
        let mut present = vec![false; max + 1];
        for &l in &self.labels {
            present[l as usize] = true;
        }
        present.into_iter().all(|p| p)
    }

    /// Renumbers labels to `0..K'` in row-major first-encounter order.
    pub fn compacted(&self) -> LabelMap {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                let next = remap.len() as u32;
                *remap.entry(l).or_insert(next)
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }

    /// Pixel count per label; requires a compact map.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let n = self.labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut sizes = vec![0usize; n];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Every label's pixel set forms a single connected component.
    pub fn is_connected(&self, connectivity: Connectivity) -> bool {
        let (_, count) = components(&self.labels, self.height, self.width, connectivity);
        count == self.num_segments()
    }
}

/// Pixel adjacency used when growing regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Iterator over in-bounds neighbours of a flat pixel index.
pub(crate) fn neighbors(
    idx: usize,
    height: usize,
    width: usize,
    connectivity: Connectivity,
) -> impl Iterator<Item = usize> {
    let r = (idx / width) as isize;
    let c = (idx % width) as isize;
    connectivity.offsets().iter().filter_map(move |&(dr, dc)| {
        let nr = r + dr;
        let nc = c + dc;
        if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
            None
        } else {
            Some(nr as usize * width + nc as usize)
        }
    })
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `a` and `b`, returning the new root.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        ra
    }
}

/// Connected components of equal-valued pixels.
///
/// Returns per-pixel component ids numbered in row-major first-encounter
/// order, plus the component count.
pub fn components(
    values: &[u32],
    height: usize,
    width: usize,
    connectivity: Connectivity,
) -> (Vec<u32>, usize) {
    let n = height * width;
    let mut ds = DisjointSet::new(n);
    for idx in 0..n {
        for nb in neighbors(idx, height, width, connectivity) {
            // each undirected edge once
            if nb < idx && values[nb] == values[idx] {
                ds.union(idx, nb);
            }
        }
    }
    let mut root_id: HashMap<usize, u32> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let root = ds.find(idx);
        let next = root_id.len() as u32;
        out.push(*root_id.entry(root).or_insert(next));
    }
    let count = root_id.len();
    (out, count)
}

/// Reassigns every disconnected fragment of a label to its largest adjacent
/// segment, so each label ends up with exactly one connected component.
///
/// For each label the largest fragment (first encountered on ties) keeps the
/// label. Remaining fragments are absorbed, in row-major order of their first
/// pixel, into the neighbouring segment with the most pixels at that moment
/// (lowest label on ties). The result is compacted.
pub fn absorb_fragments(labels: &LabelMap, connectivity: Connectivity) -> LabelMap {
    let (h, w) = (labels.height(), labels.width());
    let src = labels.as_slice();
    let (comp, ncomp) = components(src, h, w, connectivity);

    let mut comp_size = vec![0usize; ncomp];
    let mut comp_label = vec![0u32; ncomp];
    for (idx, &c) in comp.iter().enumerate() {
        comp_size[c as usize] += 1;
        comp_label[c as usize] = src[idx];
    }

    // the surviving fragment of each label
    let mut keeper: HashMap<u32, usize> = HashMap::new();
    for c in 0..ncomp {
        let l = comp_label[c];
        match keeper.get(&l) {
            Some(&k) if comp_size[k] >= comp_size[c] => {}
            _ => {
                keeper.insert(l, c);
            }
        }
    }
    if keeper.len() == ncomp {
        return labels.compacted();
    }

    let mut comp_adj: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for idx in 0..h * w {
        for nb in neighbors(idx, h, w, connectivity) {
            let (a, b) = (comp[idx] as usize, comp[nb] as usize);
            if a != b {
                comp_adj[a].push(b);
            }
        }
    }
    for adj in &mut comp_adj {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut label_size: HashMap<u32, usize> = HashMap::new();
    let mut resolved = vec![false; ncomp];
    for (&l, &k) in &keeper {
        resolved[k] = true;
        label_size.insert(l, comp_size[k]);
    }
    let mut assigned = comp_label.clone();

    let mut pending: Vec<usize> = (0..ncomp).filter(|&c| !resolved[c]).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        let mut progressed = false;
        for &c in &pending {
            let best = comp_adj[c]
                .iter()
                .filter(|&&nb| resolved[nb])
                .map(|&nb| assigned[nb])
                .max_by(|a, b| {
                    label_size[a]
                        .cmp(&label_size[b])
                        .then_with(|| b.cmp(a))
                });
            match best {
                Some(target) => {
                    assigned[c] = target;
                    resolved[c] = true;
                    *label_size.get_mut(&target).unwrap() += comp_size[c];
                    progressed = true;
                }
                None => still.push(c),
            }
        }
        if !progressed {
            // unreachable for a connected grid, kept for totality
            for &c in &still {
                assigned[c] = comp_label[c];
            }
            break;
        }
        pending = still;
    }

    let out: Vec<u32> = comp.iter().map(|&c| assigned[c as usize]).collect();
    LabelMap::new(h, w, out)
        .expect("dimensions preserved")
        .compacted()
}
