//! Semi-supervised partial-membership unmixing with superpixels as documents.
//!
//! Generative model, for superpixel `d` and pixel `i` in `d`:
//!
//! ```text
//! pi_d ~ Dirichlet(alpha * 1_M)
//! z_i  ~ Dirichlet(lambda * pi_d)
//! x_i  ~ Normal(sum_k z_ik * mu_k, diag(sum_k z_ik * sigma2_k))
//! ```
//!
//! Superpixels carrying a partial label restrict every sampled `pi_d` and
//! `z_i` so that at most `epsilon` of the mass sits on endmembers outside
//! the allowed set. The sampler is Metropolis-within-Gibbs with Dirichlet
//! random-walk proposals; endmember means are refit each sweep by weighted
//! least squares and variances by membership-weighted residual moments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::kmeans::{self, KmeansOptions};
use crate::labels::LabelMap;

/// Floor applied inside logarithms of proportions.
const Z_FLOOR: f64 = 1e-12;
/// Floor applied to Dirichlet concentration parameters built from `pi`.
const PI_FLOOR: f64 = 1e-8;
/// Added to random-walk concentrations so proposals can leave a face.
const PROPOSAL_JITTER: f64 = 0.01;
const PI_STEPS: usize = 5;
const SIMPLEX_TOL: f64 = 1e-6;

/// A pure spectral signature with diagonal Gaussian spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Endmember {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub tag: Option<String>,
}

/// Per-pixel M-vectors on the probability simplex, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionMap {
    height: usize,
    width: usize,
    m: usize,
    values: Vec<f64>,
}

impl ProportionMap {
    pub fn new(height: usize, width: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || values.len() != height * width * m {
            return Err(Error::DimensionMismatch(format!(
                "{} proportion values for {height}x{width}x{m}",
                values.len()
            )));
        }
        for (i, z) in values.chunks_exact(m).enumerate() {
            let sum: f64 = z.iter().sum();
            if z.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParam(format!(
                    "proportion vector at pixel {i} is not on the simplex (sum {sum})"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            m,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_endmembers(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Proportion vector of flat pixel index `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        self.row(row * self.width + col)
    }

    /// One H×W plane per endmember.
    pub fn plane(&self, k: usize) -> Vec<f64> {
        self.values.chunks_exact(self.m).map(|z| z[k]).collect()
    }
}

/// Allowed endmember indices per labeled superpixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialLabelSet {
    allowed: BTreeMap<u32, Vec<usize>>,
}

impl PartialLabelSet {
    pub fn new(allowed: BTreeMap<u32, Vec<usize>>, m: usize) -> Result<Self> {
        let mut cleaned = BTreeMap::new();
        for (sp, mut set) in allowed {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::InvalidParam(format!(
                    "superpixel {sp} has an empty allowed endmember set"
                )));
            }
            if let Some(&bad) = set.iter().find(|&&k| k >= m) {
                return Err(Error::InvalidParam(format!(
                    "superpixel {sp} allows endmember {bad}, but M = {m}"
                )));
            }
            cleaned.insert(sp, set);
        }
        Ok(Self { allowed: cleaned })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn get(&self, superpixel: u32) -> Option<&[usize]> {
        self.allowed.get(&superpixel).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[usize])> {
        self.allowed.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub m: usize,
    pub alpha: f64,
    pub lambda_pm: f64,
    pub epsilon: f64,
    /// Total sampler iterations.
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to half of `iterations`.
    pub burn_in: Option<usize>,
}

impl SamplerParams {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            alpha: 0.3,
            lambda_pm: 1.0,
            epsilon: 0.05,
            iterations: 200,
            seed,
            burn_in: None,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.m == 0 {
            return bad("M must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.lambda_pm > 0.0 && self.lambda_pm.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda_pm));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.iterations == 0 {
            return bad("T must be at least 1".into());
        }
        if self.burn_in() >= self.iterations {
            return bad(format!(
                "burn-in {} must be below T = {}",
                self.burn_in(),
                self.iterations
            ));
        }
        Ok(())
    }
}

/// Mass of `z` outside the allowed index set.
pub fn offset_mass(z: &[f64], allowed: &[usize]) -> f64 {
    z.iter()
        .enumerate()
        .filter(|(k, _)| !allowed.contains(k))
        .map(|(_, v)| v)
        .sum()
}

/// Caps the mass outside `allowed` at `epsilon`, redistributing the excess
/// over the allowed entries in proportion to their current mass.
pub fn project_to_allowed(z: &mut [f64], allowed: &[usize], epsilon: f64) {
    let off = offset_mass(z, allowed);
    if off <= epsilon {
        return;
    }
    // stay strictly inside the bound after rounding
    let target = epsilon * (1.0 - 1e-12);
    let inside = 1.0 - off;
    let off_scale = target / off;
    let in_share = allowed.len() as f64;
    for (k, v) in z.iter_mut().enumerate() {
        if allowed.contains(&k) {
            if inside > 0.0 {
                *v *= (1.0 - target) / inside;
            } else {
                *v = (1.0 - target) / in_share;
            }
        } else {
            *v *= off_scale;
        }
    }
}

fn ln_dirichlet(z: &[f64], conc: &[f64]) -> f64 {
    let total: f64 = conc.iter().sum();
    let mut lp = ln_gamma(total);
    for (&zk, &ck) in z.iter().zip(conc) {
        lp += (ck - 1.0) * zk.max(Z_FLOOR).ln() - ln_gamma(ck);
    }
    lp
}

fn membership_conc(pi: &[f64], lambda: f64) -> Vec<f64> {
    pi.iter().map(|p| lambda * p.max(PI_FLOOR)).collect()
}

fn proposal_conc(z: &[f64], step: f64) -> Vec<f64> {
    z.iter().map(|v| step * v.max(0.0) + PROPOSAL_JITTER).collect()
}

fn sample_dirichlet<R: Rng>(conc: &[f64], rng: &mut R) -> Option<Vec<f64>> {
    let mut draws: Vec<f64> = conc
        .iter()
        .map(|&c| Gamma::new(c, 1.0).map(|g| g.sample(rng)).unwrap_or(0.0))
        .collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return None;
    }
    draws.iter_mut().for_each(|d| *d /= sum);
    Some(draws)
}

/// Gaussian log density of one pixel under partial membership `z`.
fn ln_obs(x: &[f64], z: &[f64], endmembers: &[Endmember]) -> f64 {
    let mut lp = 0.0;
    for (b, &xb) in x.iter().enumerate() {
        let mut mean = 0.0;
        let mut var = 0.0;
        for (zk, e) in z.iter().zip(endmembers) {
            mean += zk * e.mu[b];
            var += zk * e.sigma2[b];
        }
        let var = var.max(f64::MIN_POSITIVE);
        lp -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (xb - mean).powi(2) / var);
    }
    lp
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for (seed, phase, iteration, item).
fn substream(seed: u64, phase: u64, iteration: usize, item: usize) -> ChaCha8Rng {
    let key = splitmix(seed ^ splitmix(phase.wrapping_mul(1_000_003) ^ iteration as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(item as u64);
    rng
}

fn variance_floor(cube: &HsiCube) -> Vec<f64> {
    cube.band_variance()
        .into_iter()
        .map(|v| (1e-6 * v).max(1e-12))
        .collect()
}

/// Initial endmembers: k-means++ seeding on pixel spectra followed by a
/// short hard-assignment refinement. Variances are the within-cluster
/// per-band variances, floored at 1e-6 of the global band variance.
pub fn init_endmembers(cube: &HsiCube, m: usize, seed: u64) -> Result<Vec<Endmember>> {
    if m == 0 {
        return Err(Error::InvalidParam("M must be at least 1".into()));
    }
    let b = cube.bands();
    let opts = KmeansOptions {
        k: m,
        restarts: 1,
        max_iters: 10,
        seed,
    };
    let km = kmeans::kmeans(cube.data(), b, &opts)?;
    let floor = variance_floor(cube);
    let mut var = vec![vec![0.0; b]; m];
    let mut counts = vec![0usize; m];
    for (x, &a) in cube.data().chunks_exact(b).zip(&km.assignments) {
        let a = a as usize;
        counts[a] += 1;
        for ((s, v), c) in var[a].iter_mut().zip(x).zip(&km.centroids[a]) {
            *s += (v - c) * (v - c);
        }
    }
    Ok(km
        .centroids
        .into_iter()
        .zip(var)
        .zip(counts)
        .map(|((mu, v), n)| Endmember {
            mu,
            sigma2: v
                .iter()
                .zip(&floor)
                .map(|(s, f)| (s / n.max(1) as f64).max(*f))
                .collect(),
            tag: None,
        })
        .collect())
}

/// Output of [`run_spmlda`].
#[derive(Debug, Clone)]
pub struct UnmixResult {
    /// Posterior mean over retained samples.
    pub proportions: ProportionMap,
    pub endmembers: Vec<Endmember>,
    /// Joint log density after every iteration.
    pub log_likelihood: Vec<f64>,
    /// Pixel-move acceptance rate over retained iterations.
    pub acceptance_rate: f64,
    /// Largest off-allowed-set mass seen in any retained sample of a labeled
    /// superpixel (pixel memberships and superpixel proportions).
    pub max_offset_mass: f64,
}

fn check_inputs(cube: &HsiCube, superpixels: &LabelMap) -> Result<usize> {
    if superpixels.height() != cube.height() || superpixels.width() != cube.width() {
        return Err(Error::DimensionMismatch(format!(
            "superpixels are {}x{}, cube is {}x{}",
            superpixels.height(),
            superpixels.width(),
            cube.height(),
            cube.width()
        )));
    }
    if !superpixels.is_compact() {
        return Err(Error::InvalidParam("superpixel labels must be compact".into()));
    }
    Ok(superpixels.segment_sizes().len())
}

/// Joint log density of the model at a given state.
///
/// The superpixel proportions are taken at their plug-in value, the mean
/// membership over each superpixel. With `M = 1` both Dirichlet terms are
/// identically zero and only the Gaussian data term remains.
pub fn log_likelihood(
    cube: &HsiCube,
    superpixels: &LabelMap,
    proportions: &ProportionMap,
    endmembers: &[Endmember],
    params: &SamplerParams,
) -> Result<f64> {
    let d = check_inputs(cube, superpixels)?;
    let m = proportions.num_endmembers();
    if endmembers.len() != m
        || proportions.height() != cube.height()
        || proportions.width() != cube.width()
    {
        return Err(Error::DimensionMismatch(
            "proportions, endmembers and cube disagree".into(),
        ));
    }
    if endmembers.iter().any(|e| e.mu.len() != cube.bands() || e.sigma2.len() != cube.bands()) {
        return Err(Error::DimensionMismatch("endmember band count differs from cube".into()));
    }
    Ok(joint_density(
        cube,
        superpixels.as_slice(),
        d,
        proportions.values(),
        m,
        endmembers,
        params,
    ))
}

fn joint_density(
    cube: &HsiCube,
    sp: &[u32],
    d: usize,
    z: &[f64],
    m: usize,
    endmembers: &[Endmember],
    params: &SamplerParams,
) -> f64 {
    let data: f64 = (0..cube.num_pixels())
        .into_par_iter()
        .map(|i| ln_obs(cube.spectrum(i), &z[i * m..(i + 1) * m], endmembers))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    if m == 1 {
        return data;
    }
    let mut pi = vec![0.0; d * m];
    let mut counts = vec![0usize; d];
    for (i, &l) in sp.iter().enumerate() {
        counts[l as usize] += 1;
        for k in 0..m {
            pi[l as usize * m + k] += z[i * m + k];
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        pi[l * m..(l + 1) * m].iter_mut().for_each(|v| *v /= n as f64);
    }
    let prior = vec![params.alpha; m];
    let mut lp = data;
    for l in 0..d {
        lp += ln_dirichlet(&pi[l * m..(l + 1) * m], &prior);
    }
    let concs: Vec<Vec<f64>> = (0..d)
        .map(|l| membership_conc(&pi[l * m..(l + 1) * m], params.lambda_pm))
        .collect();
    for (i, &l) in sp.iter().enumerate() {
        lp += ln_dirichlet(&z[i * m..(i + 1) * m], &concs[l as usize]);
    }
    lp
}

/// Initial memberships: per-pixel responsibilities under an equal-weight
/// mixture of the initial endmember Gaussians.
fn initial_memberships(cube: &HsiCube, endmembers: &[Endmember]) -> Vec<f64> {
    (0..cube.num_pixels())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = cube.spectrum(i);
            let logs: Vec<f64> = endmembers
                .iter()
                .map(|e| ln_obs(x, &[1.0], std::slice::from_ref(e)))
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(move |v| v / s)
        })
        .collect()
}

/// Refits endmember means by per-band weighted least squares (variance
/// weights from the current state) and variances by membership-weighted
/// squared residuals. Returns whether any variance hit the floor.
fn update_endmembers(cube: &HsiCube, z: &[f64], endmembers: &mut [Endmember], floor: &[f64]) -> bool {
    let m = endmembers.len();
    let b = cube.bands();
    let n = cube.num_pixels();

    let new_mu: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|band| {
            let mut a = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for i in 0..n {
                let zi = &z[i * m..(i + 1) * m];
                let v: f64 = zi
                    .iter()
                    .zip(endmembers.iter())
                    .map(|(zk, e)| zk * e.sigma2[band])
                    .sum::<f64>()
                    .max(f64::MIN_POSITIVE);
                let x = cube.spectrum(i)[band];
                for p in 0..m {
                    rhs[p] += zi[p] * x / v;
                    for q in 0..m {
                        a[p * m + q] += zi[p] * zi[q] / v;
                    }
                }
            }
            // ridge towards the current means keeps unused endmembers in place
            let trace: f64 = (0..m).map(|p| a[p * m + p]).sum();
            let ridge = 1e-9 * trace / m as f64 + f64::MIN_POSITIVE;
            for p in 0..m {
                a[p * m + p] += ridge;
                rhs[p] += ridge * endmembers[p].mu[band];
            }
            solve_spd(&mut a, &mut rhs, m)
                .unwrap_or_else(|| endmembers.iter().map(|e| e.mu[band]).collect())
        })
        .collect();
    for (band, mus) in new_mu.iter().enumerate() {
        for (e, &mu) in endmembers.iter_mut().zip(mus) {
            e.mu[band] = mu;
        }
    }

    let mut num = vec![0.0; m * b];
    let mut den = vec![0.0; m];
    for i in 0..n {
        let zi = &z[i * m..(i + 1) * m];
        let x = cube.spectrum(i);
        for band in 0..b {
            let mean: f64 = zi.iter().zip(endmembers.iter()).map(|(zk, e)| zk * e.mu[band]).sum();
            let r2 = (x[band] - mean).powi(2);
            for k in 0..m {
                num[k * b + band] += zi[k] * r2;
            }
        }
        for k in 0..m {
            den[k] += zi[k];
        }
    }
    let mut floored = false;
    for (k, e) in endmembers.iter_mut().enumerate() {
        if den[k] < 1e-9 {
            continue;
        }
        for band in 0..b {
            let s = num[k * b + band] / den[k];
            if s < floor[band] || !s.is_finite() {
                floored = true;
                e.sigma2[band] = floor[band];
            } else {
                e.sigma2[band] = s;
            }
        }
    }
    floored
}

/// Cholesky solve of a small symmetric positive-definite system in place.
fn solve_spd(a: &mut [f64], rhs: &mut [f64], m: usize) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= a[i * m + k] * rhs[k];
        }
        rhs[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..m {
            s -= a[k * m + i] * rhs[k];
        }
        rhs[i] = s / a[i * m + i];
    }
    Some(rhs.to_vec())
}

/// Adjusts a random-walk concentration towards 20–40 % acceptance.
fn tune(step: f64, rate: f64) -> f64 {
    let s = if rate < 0.2 {
        step * 1.5
    } else if rate > 0.4 {
        step / 1.5
    } else {
        step
    };
    s.clamp(1.0, 1e9)
}

/// Runs the sampler for `params.iterations` sweeps and returns posterior
/// mean proportions over the post-burn-in sweeps.
pub fn run_spmlda(
    cube: &HsiCube,
    superpixels: &LabelMap,
    labels: &PartialLabelSet,
    params: &SamplerParams,
) -> Result<UnmixResult> {
    params.validate()?;
    let d = check_inputs(cube, superpixels)?;
    let m = params.m;
    let n = cube.num_pixels();
    let b = cube.bands();
    for (sp, set) in labels.iter() {
        if sp as usize >= d {
            return Err(Error::InvalidParam(format!(
                "partial label references superpixel {sp}, only {d} exist"
            )));
        }
        if set.iter().any(|&k| k >= m) {
            return Err(Error::InvalidParam(format!(
                "partial label for superpixel {sp} exceeds M = {m}"
            )));
        }
    }
    let sp = superpixels.as_slice();
    let allowed: Vec<Option<&[usize]>> = (0..d as u32).map(|l| labels.get(l)).collect();

    let mut endmembers = init_endmembers(cube, m, params.seed)?;
    let floor = variance_floor(cube);

    // endmembers owned exclusively by a labeled set start at the labeled pixels' mean
    for k in 0..m {
        let mut sum = vec![0.0; b];
        let mut count = 0usize;
        for (i, &l) in sp.iter().enumerate() {
            if allowed[l as usize] == Some(&[k][..]) {
                count += 1;
                for (s, v) in sum.iter_mut().zip(cube.spectrum(i)) {
                    *s += v;
                }
            }
        }
        if count > 0 {
            endmembers[k].mu = sum.iter().map(|s| s / count as f64).collect();
        }
    }

    if m == 1 {
        let z = vec![1.0; n];
        update_endmembers(cube, &z, &mut endmembers, &floor);
        let proportions = ProportionMap::new(cube.height(), cube.width(), 1, z.clone())?;
        let ll = joint_density(cube, sp, d, &z, 1, &endmembers, params);
        return Ok(UnmixResult {
            proportions,
            endmembers,
            log_likelihood: vec![ll; params.iterations],
            acceptance_rate: 1.0,
            max_offset_mass: 0.0,
        });
    }

    let mut z = initial_memberships(cube, &endmembers);
    for (i, &l) in sp.iter().enumerate() {
        if let Some(set) = allowed[l as usize] {
            project_to_allowed(&mut z[i * m..(i + 1) * m], set, params.epsilon);
        }
    }
    let mut pi = vec![0.0; d * m];
    let mut counts = vec![0usize; d];
    for (i, &l) in sp.iter().enumerate() {
        counts[l as usize] += 1;
        for k in 0..m {
            pi[l as usize * m + k] += z[i * m + k];
        }
    }
    for l in 0..d {
        let row = &mut pi[l * m..(l + 1) * m];
        row.iter_mut().for_each(|v| *v /= counts[l] as f64);
        if let Some(set) = allowed[l] {
            project_to_allowed(row, set, params.epsilon);
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (i, &l) in sp.iter().enumerate() {
        members[l as usize].push(i);
    }

    let burn_in = params.burn_in();
    let mut z_step = 100.0;
    let mut pi_step = 100.0;
    let mut z_sum = vec![0.0; n * m];
    let mut retained = 0usize;
    let mut accepted_retained = 0usize;
    let mut max_offset = 0.0f64;
    let mut trace = Vec::with_capacity(params.iterations);
    let mut warned = false;
    let prior = vec![params.alpha; m];

    for t in 0..params.iterations {
        // memberships: conditionally independent given pi and endmembers
        let concs: Vec<Vec<f64>> = (0..d)
            .map(|l| membership_conc(&pi[l * m..(l + 1) * m], params.lambda_pm))
            .collect();
        let ems = &endmembers;
        let moves: Vec<Option<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(params.seed, 1, t, i);
                let l = sp[i] as usize;
                let cur = &z[i * m..(i + 1) * m];
                let mut prop = sample_dirichlet(&proposal_conc(cur, z_step), &mut rng)?;
                if let Some(set) = allowed[l] {
                    project_to_allowed(&mut prop, set, params.epsilon);
                }
                let x = cube.spectrum(i);
                let log_ratio = ln_obs(x, &prop, ems) + ln_dirichlet(&prop, &concs[l])
                    - ln_obs(x, cur, ems)
                    - ln_dirichlet(cur, &concs[l])
                    + ln_dirichlet(cur, &proposal_conc(&prop, z_step))
                    - ln_dirichlet(&prop, &proposal_conc(cur, z_step));
                let u: f64 = rng.random();
                (log_ratio.is_finite() && u.ln() < log_ratio).then_some(prop)
            })
            .collect();
        let mut accepted = 0usize;
        for (i, mv) in moves.into_iter().enumerate() {
            if let Some(prop) = mv {
                z[i * m..(i + 1) * m].copy_from_slice(&prop);
                accepted += 1;
            }
        }

        // superpixel proportions given memberships
        let log_z_sums: Vec<Vec<f64>> = members
            .iter()
            .map(|idx| {
                let mut s = vec![0.0; m];
                for &i in idx {
                    for k in 0..m {
                        s[k] += z[i * m + k].max(Z_FLOOR).ln();
                    }
                }
                s
            })
            .collect();
        let pi_target = |p: &[f64], l: usize| -> f64 {
            let conc = membership_conc(p, params.lambda_pm);
            let nd = members[l].len() as f64;
            let total: f64 = conc.iter().sum();
            let mut lp = ln_dirichlet(p, &prior) + nd * ln_gamma(total);
            for k in 0..m {
                lp += -nd * ln_gamma(conc[k]) + (conc[k] - 1.0) * log_z_sums[l][k];
            }
            lp
        };
        let pi_moves: Vec<(Vec<f64>, usize)> = (0..d)
            .into_par_iter()
            .map(|l| {
                let mut rng = substream(params.seed, 2, t, l);
                let mut cur = pi[l * m..(l + 1) * m].to_vec();
                let mut cur_lp = pi_target(&cur, l);
                let mut acc = 0usize;
                for _ in 0..PI_STEPS {
                    let Some(mut prop) = sample_dirichlet(&proposal_conc(&cur, pi_step), &mut rng)
                    else {
                        continue;
                    };
                    if let Some(set) = allowed[l] {
                        project_to_allowed(&mut prop, set, params.epsilon);
                    }
                    let prop_lp = pi_target(&prop, l);
                    let log_ratio = prop_lp - cur_lp
                        + ln_dirichlet(&cur, &proposal_conc(&prop, pi_step))
                        - ln_dirichlet(&prop, &proposal_conc(&cur, pi_step));
                    let u: f64 = rng.random();
                    if log_ratio.is_finite() && u.ln() < log_ratio {
                        cur = prop;
                        cur_lp = prop_lp;
                        acc += 1;
                    }
                }
                (cur, acc)
            })
            .collect();
        let mut pi_accepted = 0usize;
        for (l, (p, acc)) in pi_moves.into_iter().enumerate() {
            pi[l * m..(l + 1) * m].copy_from_slice(&p);
            pi_accepted += acc;
        }

        if update_endmembers(cube, &z, &mut endmembers, &floor) && !warned {
            log::warn!("endmember variance refloored at iteration {t}");
            warned = true;
        }

        let z_rate = accepted as f64 / n as f64;
        let pi_rate = pi_accepted as f64 / (d * PI_STEPS) as f64;
        if t < burn_in {
            z_step = tune(z_step, z_rate);
            pi_step = tune(pi_step, pi_rate);
        } else {
            retained += 1;
            accepted_retained += accepted;
            for (acc, v) in z_sum.iter_mut().zip(&z) {
                *acc += v;
            }
            for (i, &l) in sp.iter().enumerate() {
                if let Some(set) = allowed[l as usize] {
                    max_offset = max_offset.max(offset_mass(&z[i * m..(i + 1) * m], set));
                }
            }
            for (l, set) in allowed.iter().enumerate() {
                if let Some(set) = set {
                    max_offset = max_offset.max(offset_mass(&pi[l * m..(l + 1) * m], set));
                }
            }
        }
        trace.push(joint_density(cube, sp, d, &z, m, &endmembers, params));
    }

    let mut mean: Vec<f64> = z_sum.iter().map(|v| v / retained as f64).collect();
    for row in mean.chunks_exact_mut(m) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(UnmixResult {
        proportions: ProportionMap::new(cube.height(), cube.width(), m, mean)?,
        endmembers,
        log_likelihood: trace,
        acceptance_rate: accepted_retained as f64 / (retained * n) as f64,
        max_offset_mass: max_offset,
    })
}
