//! Dunn, Davies-Bouldin and Silhouette indices with every segment treated
//! as a cluster of spectra, plus aggregation over repeated runs.
//!
//! All distances are plain Euclidean distances between feature vectors.
//! Higher Dunn and Silhouette, and lower Davies-Bouldin, mean a better
//! partition.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::hslic::sq_dist;
use crate::labels::LabelMap;

/// Default number of points used by the quadratic-cost indices.
pub const DEFAULT_SUBSAMPLE: usize = 20_000;

/// Borrowed row-major feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_cube(cube: &'a HsiCube) -> Self {
        Self {
            data: cube.data(),
            dim: cube.bands(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Maps arbitrary labels to `0..k` and returns (dense labels, k).
fn dense_labels(labels: &[u32]) -> (Vec<usize>, usize) {
    let mut map: HashMap<u32, usize> = HashMap::new();
    let dense = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

fn check(features: &Features, labels: &[u32]) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Minimum single-linkage distance between clusters divided by the largest
/// cluster diameter.
pub fn dunn_index(features: &Features, labels: &[u32]) -> Result<f64> {
    check(features, labels)?;
    let (dense, k) = dense_labels(labels);
    if k < 2 {
        return Err(Error::UndefinedIndex("Dunn index needs at least 2 clusters".into()));
    }
    let n = features.len();
    let (min_inter, max_intra) = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut inter = f64::INFINITY;
            let mut intra = 0.0f64;
            for j in (i + 1)..n {
                let d = dist(xi, features.row(j));
                if dense[i] == dense[j] {
                    intra = intra.max(d);
                } else {
                    inter = inter.min(d);
                }
            }
            (inter, intra)
        })
        .reduce(
            || (f64::INFINITY, 0.0),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        );
    if max_intra == 0.0 {
        return Err(Error::UndefinedIndex(
            "Dunn index undefined: every cluster has zero diameter".into(),
        ));
    }
    Ok(min_inter / max_intra)
}

/// Mean over clusters of the worst (s_i + s_j) / d(c_i, c_j) ratio.
pub fn davies_bouldin(features: &Features, labels: &[u32]) -> Result<f64> {
    check(features, labels)?;
    let (dense, k) = dense_labels(labels);
    if k < 2 {
        return Err(Error::UndefinedIndex(
            "Davies-Bouldin index needs at least 2 clusters".into(),
        ));
    }
    let dim = features.dim();
    let mut centroids = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &c) in dense.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        let n = counts[c] as f64;
        centroids[c * dim..(c + 1) * dim].iter_mut().for_each(|v| *v /= n);
    }
    let mut scatter = vec![0.0; k];
    for (i, &c) in dense.iter().enumerate() {
        scatter[c] += dist(features.row(i), &centroids[c * dim..(c + 1) * dim]);
    }
    for c in 0..k {
        scatter[c] /= counts[c] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let ci = &centroids[i * dim..(i + 1) * dim];
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist(ci, &centroids[j * dim..(j + 1) * dim]);
            if d == 0.0 {
                return Err(Error::UndefinedIndex(format!(
                    "Davies-Bouldin index undefined: clusters {i} and {j} share a centroid"
                )));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Mean silhouette width. Points whose cluster is a singleton score 0, as do
/// points with a = b = 0. When `subsample` is smaller than the number of
/// points, only a seeded uniform sample of that size is scored, each against
/// the full population.
pub fn silhouette(
    features: &Features,
    labels: &[u32],
    subsample: Option<usize>,
    seed: u64,
) -> Result<f64> {
    check(features, labels)?;
    let (dense, k) = dense_labels(labels);
    if k < 2 {
        return Err(Error::UndefinedIndex("silhouette needs at least 2 clusters".into()));
    }
    let n = features.len();
    let mut counts = vec![0usize; k];
    for &c in &dense {
        counts[c] += 1;
    }
    let evaluated = sample_indices(n, subsample, seed);
    let scores: Vec<f64> = evaluated
        .par_iter()
        .map(|&i| {
            let own = dense[i];
            if counts[own] < 2 {
                return 0.0;
            }
            let xi = features.row(i);
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[dense[j]] += dist(xi, features.row(j));
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// All indices when `subsample` is `None` or covers everything, otherwise a
/// seeded uniform sample without replacement, in ascending order.
pub fn sample_indices(n: usize, subsample: Option<usize>, seed: u64) -> Vec<usize> {
    match subsample {
        Some(s) if s < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, n, s).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n).collect(),
    }
}

/// How the quadratic-cost indices are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexOptions {
    /// `None` evaluates every pixel.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            subsample: Some(DEFAULT_SUBSAMPLE),
            seed: 0,
        }
    }
}

/// The three indices for one segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunIndices {
    pub dunn: f64,
    pub davies_bouldin: f64,
    pub silhouette: f64,
}

/// Computes all three indices for one segmentation.
///
/// Davies-Bouldin always uses every pixel. Dunn is computed on the sampled
/// points; Silhouette scores the sampled points against all pixels.
pub fn compute_indices(features: &Features, labels: &[u32], opts: &IndexOptions) -> Result<RunIndices> {
    check(features, labels)?;
    let db = davies_bouldin(features, labels)?;
    let sample = sample_indices(features.len(), opts.subsample, opts.seed);
    let dunn = if sample.len() == features.len() {
        dunn_index(features, labels)?
    } else {
        let mut sub = Vec::with_capacity(sample.len() * features.dim());
        for &i in &sample {
            sub.extend_from_slice(features.row(i));
        }
        let sub_labels: Vec<u32> = sample.iter().map(|&i| labels[i]).collect();
        dunn_index(&Features::new(&sub, features.dim())?, &sub_labels)?
    };
    let sil = silhouette(features, labels, opts.subsample, opts.seed)?;
    Ok(RunIndices {
        dunn,
        davies_bouldin: db,
        silhouette: sil,
    })
}

/// Mean and sample standard deviation of one index across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        // identical runs report their common value and an exact zero spread,
        // free of summation rounding
        if values.windows(2).all(|w| w[0] == w[1]) {
            let mean = values.first().copied().unwrap_or(f64::NAN);
            return Self { mean, std: 0.0, values };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub dunn: MetricSummary,
    pub davies_bouldin: MetricSummary,
    pub silhouette: MetricSummary,
    pub runs: usize,
    /// True when only one run was aggregated, so every std is 0 by definition.
    pub single_run: bool,
    pub subsample: Option<usize>,
    pub seeds: Vec<u64>,
}

impl ValidityReport {
    pub fn from_runs(runs: &[RunIndices], seeds: Vec<u64>, subsample: Option<usize>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidParam("a report needs at least one run".into()));
        }
        Ok(Self {
            dunn: MetricSummary::from_values(runs.iter().map(|r| r.dunn).collect()),
            davies_bouldin: MetricSummary::from_values(
                runs.iter().map(|r| r.davies_bouldin).collect(),
            ),
            silhouette: MetricSummary::from_values(runs.iter().map(|r| r.silhouette).collect()),
            runs: runs.len(),
            single_run: runs.len() == 1,
            subsample,
            seeds,
        })
    }

    /// CSV with columns `metric,mean,std,runs,subsample,seed`; `seed` is the
    /// first run's seed and `subsample` reads `all` in exact mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,std,runs,subsample,seed\n");
        let sub = self
            .subsample
            .map_or_else(|| "all".to_string(), |s| s.to_string());
        let seed = self.seeds.first().copied().unwrap_or(0);
        for (name, m) in [
            ("dunn", &self.dunn),
            ("davies_bouldin", &self.davies_bouldin),
            ("silhouette", &self.silhouette),
        ] {
            let _ = writeln!(out, "{name},{:?},{:?},{},{sub},{seed}", m.mean, m.std, self.runs);
        }
        out
    }
}

/// Runs `pipeline` once per seed, scores each resulting segmentation on
/// `features`, and aggregates the three indices.
pub fn evaluate_runs<F>(
    features: &Features,
    seeds: &[u64],
    opts: &IndexOptions,
    mut pipeline: F,
) -> Result<ValidityReport>
where
    F: FnMut(u64) -> Result<LabelMap>,
{
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let labels = pipeline(seed)?;
        runs.push(compute_indices(features, labels.as_slice(), opts)?);
    }
    ValidityReport::from_runs(&runs, seeds.to_vec(), opts.subsample)
}
