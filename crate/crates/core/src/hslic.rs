//! Hyperspectral SLIC.
//!
//! Local k-means over the full spectrum plus pixel position. No band
//! reduction is applied: the spectral term is the squared Euclidean distance
//! over all bands, the spatial term the (unsquared) Euclidean pixel distance
//! scaled by `m / S`.

use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::labels::{absorb_fragments, Connectivity, LabelMap};

#[derive(Debug, Clone, PartialEq)]
pub struct HslicParams {
    /// Requested number of superpixels.
    pub k: usize,
    /// Spatial scaling factor.
    pub m: f64,
    /// Side of the perturbation window (odd).
    pub n: usize,
    pub max_iters: usize,
    /// Stop once the summed spatial center displacement falls below this.
    pub residual_tol: f64,
    pub enforce_connectivity: bool,
    /// Divide the spectral term by the band count.
    pub normalize_spectral: bool,
}

impl HslicParams {
    pub fn new(k: usize, m: f64) -> Self {
        Self {
            k,
            m,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("K must be at least 1".into()));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::InvalidParam(format!("m must be finite and >= 0, got {}", self.m)));
        }
        if self.n == 0 || self.n % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "perturbation window must be odd, got {}",
                self.n
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for HslicParams {
    fn default() -> Self {
        Self {
            k: 500,
            m: 20.0,
            n: 3,
            max_iters: 10,
            residual_tol: 1.0,
            enforce_connectivity: true,
            normalize_spectral: false,
        }
    }
}

/// A cluster center: mean spectrum plus mean (row, col) position.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCenter {
    pub spectrum: Vec<f64>,
    pub row: f64,
    pub col: f64,
    pub member_count: usize,
}

/// Grid interval `S = round(sqrt(H*W / K))`, at least 1.
pub fn grid_interval(height: usize, width: usize, k: usize) -> usize {
    let s = ((height * width) as f64 / k.max(1) as f64).sqrt().round() as usize;
    s.max(1)
}

/// Sum of squared per-band differences.
pub fn spectral_distance(x: &[f64], c: &[f64]) -> Result<f64> {
    if x.len() != c.len() {
        return Err(Error::DimensionMismatch(format!(
            "spectra of length {} and {}",
            x.len(),
            c.len()
        )));
    }
    Ok(sq_dist(x, c))
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distance between two (row, col) positions.
pub fn spatial_distance(p: (f64, f64), q: (f64, f64)) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

/// `d_spec + (m / S) * d_spat`.
#[inline]
pub fn combined_distance(d_spec: f64, d_spat: f64, m: f64, s: f64) -> f64 {
    d_spec + (m / s) * d_spat
}

/// Grid coordinates along one axis: the center of each S-wide cell, the last
/// (possibly partial) cell included.
fn axis_positions(len: usize, s: usize) -> Vec<usize> {
    (0..len.div_ceil(s))
        .map(|i| {
            let start = i * s;
            start + s.min(len - start) / 2
        })
        .collect()
}

/// Places centers on a regular grid of interval S.
pub fn init_centers(cube: &HsiCube, params: &HslicParams) -> Result<Vec<ClusterCenter>> {
    params.validate()?;
    if params.k > cube.num_pixels() {
        return Err(Error::InvalidParam(format!(
            "K = {} exceeds pixel count {}",
            params.k,
            cube.num_pixels()
        )));
    }
    let s = grid_interval(cube.height(), cube.width(), params.k);
    // A single requested superpixel always means one center at the middle,
    // even when S does not tile the image exactly.
    let (rows, cols) = if params.k == 1 {
        (vec![cube.height() / 2], vec![cube.width() / 2])
    } else {
        (axis_positions(cube.height(), s), axis_positions(cube.width(), s))
    };
    let mut centers = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            centers.push(ClusterCenter {
                spectrum: cube.pixel(r, c).to_vec(),
                row: r as f64,
                col: c as f64,
                member_count: 0,
            });
        }
    }
    Ok(centers)
}

/// Central-difference gradient summed over bands; neighbours past the image
/// edge are clamped to the edge pixel.
pub fn gradient_magnitude(cube: &HsiCube, row: usize, col: usize) -> f64 {
    let (h, w) = (cube.height(), cube.width());
    let left = cube.pixel(row, col.saturating_sub(1));
    let right = cube.pixel(row, (col + 1).min(w - 1));
    let up = cube.pixel(row.saturating_sub(1), col);
    let down = cube.pixel((row + 1).min(h - 1), col);
    sq_dist(right, left) + sq_dist(down, up)
}

/// Moves each center to the lowest-gradient non-border pixel of its n×n
/// window, if that gradient is strictly below the gradient at the current
/// position. Ties among candidates resolve in row-major order.
pub fn perturb_centers(
    cube: &HsiCube,
    centers: &[ClusterCenter],
    n: usize,
) -> Result<Vec<ClusterCenter>> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "perturbation window must be odd, got {n}"
        )));
    }
    let (h, w) = (cube.height() as isize, cube.width() as isize);
    let half = (n / 2) as isize;
    let moved = centers
        .iter()
        .map(|center| {
            let r0 = center.row.round() as isize;
            let c0 = center.col.round() as isize;
            let mut best = gradient_magnitude(cube, r0 as usize, c0 as usize);
            let mut best_pos = None;
            for r in (r0 - half)..=(r0 + half) {
                for c in (c0 - half)..=(c0 + half) {
                    if r <= 0 || c <= 0 || r >= h - 1 || c >= w - 1 {
                        continue;
                    }
                    let g = gradient_magnitude(cube, r as usize, c as usize);
                    if g < best {
                        best = g;
                        best_pos = Some((r as usize, c as usize));
                    }
                }
            }
            match best_pos {
                Some((r, c)) => ClusterCenter {
                    spectrum: cube.pixel(r, c).to_vec(),
                    row: r as f64,
                    col: c as f64,
                    member_count: center.member_count,
                },
                None => center.clone(),
            }
        })
        .collect();
    Ok(moved)
}

/// Distance configuration for one run.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSpec {
    pub m: f64,
    pub s: f64,
    pub normalize_spectral: bool,
}

impl DistanceSpec {
    #[inline]
    pub fn eval(&self, spectrum: &[f64], row: usize, col: usize, center: &ClusterCenter) -> f64 {
        let mut d_spec = sq_dist(spectrum, &center.spectrum);
        if self.normalize_spectral {
            d_spec /= spectrum.len() as f64;
        }
        let d_spat = spatial_distance((row as f64, col as f64), (center.row, center.col));
        combined_distance(d_spec, d_spat, self.m, self.s)
    }
}

/// Assigns every pixel to the nearest center among those whose window
/// (|Δrow| ≤ S and |Δcol| ≤ S) covers it; lowest center index wins ties.
/// Pixels covered by no window fall back to a search over all centers.
pub fn assign_pixels(
    cube: &HsiCube,
    centers: &[ClusterCenter],
    dist: &DistanceSpec,
    window: usize,
) -> Vec<u32> {
    let (h, w) = (cube.height(), cube.width());
    let cell = window.max(1);
    let brows = h.div_ceil(cell);
    let bcols = w.div_ceil(cell);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); brows * bcols];
    for (k, c) in centers.iter().enumerate() {
        let br = ((c.row.max(0.0) as usize) / cell).min(brows - 1);
        let bc = ((c.col.max(0.0) as usize) / cell).min(bcols - 1);
        buckets[br * bcols + bc].push(k);
    }
    let reach = window as f64;

    let mut labels = vec![0u32; h * w];
    labels
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(r, row_labels)| {
            let br = r / cell;
            for (c, slot) in row_labels.iter_mut().enumerate() {
                let bc = c / cell;
                let x = cube.pixel(r, c);
                let mut best = (f64::INFINITY, usize::MAX);
                for nbr in br.saturating_sub(1)..=(br + 1).min(brows - 1) {
                    for nbc in bc.saturating_sub(1)..=(bc + 1).min(bcols - 1) {
                        for &k in &buckets[nbr * bcols + nbc] {
                            let ck = &centers[k];
                            if (r as f64 - ck.row).abs() > reach || (c as f64 - ck.col).abs() > reach
                            {
                                continue;
                            }
                            let d = dist.eval(x, r, c, ck);
                            if d < best.0 || (d == best.0 && k < best.1) {
                                best = (d, k);
                            }
                        }
                    }
                }
                if best.1 == usize::MAX {
                    for (k, ck) in centers.iter().enumerate() {
                        let d = dist.eval(x, r, c, ck);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                }
                *slot = best.1 as u32;
            }
        });
    labels
}

/// Moves every non-empty center to the mean spectrum and position of its
/// members. Empty centers keep their previous state with a zero count.
/// Returns the summed spatial displacement.
pub fn update_centers(cube: &HsiCube, labels: &[u32], centers: &mut [ClusterCenter]) -> f64 {
    let b = cube.bands();
    let w = cube.width();
    let k = centers.len();
    let mut sums = vec![0.0; k * b];
    let mut pos = vec![(0.0f64, 0.0f64); k];
    let mut counts = vec![0usize; k];
    for (idx, &l) in labels.iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        pos[l].0 += (idx / w) as f64;
        pos[l].1 += (idx % w) as f64;
        for (s, v) in sums[l * b..(l + 1) * b].iter_mut().zip(cube.spectrum(idx)) {
            *s += v;
        }
    }
    let mut residual = 0.0;
    for (j, center) in centers.iter_mut().enumerate() {
        center.member_count = counts[j];
        if counts[j] == 0 {
            continue;
        }
        let n = counts[j] as f64;
        let (row, col) = (pos[j].0 / n, pos[j].1 / n);
        residual += spatial_distance((row, col), (center.row, center.col));
        center.row = row;
        center.col = col;
        for (dst, s) in center.spectrum.iter_mut().zip(&sums[j * b..(j + 1) * b]) {
            *dst = s / n;
        }
    }
    residual
}

/// Summed combined distance of every pixel to its assigned center.
pub fn objective(cube: &HsiCube, labels: &[u32], centers: &[ClusterCenter], dist: &DistanceSpec) -> f64 {
    let w = cube.width();
    labels
        .iter()
        .enumerate()
        .map(|(idx, &l)| dist.eval(cube.spectrum(idx), idx / w, idx % w, &centers[l as usize]))
        .sum()
}

/// Output of a full HSLIC run.
#[derive(Debug, Clone)]
pub struct HslicResult {
    /// Compact labels; label `j` belongs to `centers[j]`.
    pub labels: LabelMap,
    pub centers: Vec<ClusterCenter>,
    pub iterations: usize,
    /// Summed center displacement after each iteration.
    pub residuals: Vec<f64>,
}

/// Runs initialization, perturbation and the assign/update loop, then the
/// optional connectivity post-pass. The procedure is deterministic.
pub fn run_hslic(cube: &HsiCube, params: &HslicParams) -> Result<HslicResult> {
    let centers = init_centers(cube, params)?;
    let mut centers = perturb_centers(cube, &centers, params.n)?;
    let s = grid_interval(cube.height(), cube.width(), params.k);
    let dist = DistanceSpec {
        m: params.m,
        s: s as f64,
        normalize_spectral: params.normalize_spectral,
    };

    let mut labels = Vec::new();
    let mut residuals = Vec::new();
    for _ in 0..params.max_iters {
        labels = assign_pixels(cube, &centers, &dist, s);
        let residual = update_centers(cube, &labels, &mut centers);
        residuals.push(residual);
        if residual < params.residual_tol {
            break;
        }
    }

    let raw = LabelMap::new(cube.height(), cube.width(), labels)?;
    let labels = if params.enforce_connectivity {
        absorb_fragments(&raw, Connectivity::Four)
    } else {
        raw.compacted()
    };
    let centers = centers_from_labels(cube, &labels);
    Ok(HslicResult {
        labels,
        centers,
        iterations: residuals.len(),
        residuals,
    })
}

/// Mean spectrum and position of every segment of a compact label map.
pub fn centers_from_labels(cube: &HsiCube, labels: &LabelMap) -> Vec<ClusterCenter> {
    let n = labels.segment_sizes().len();
    let mut centers = vec![
        ClusterCenter {
            spectrum: vec![0.0; cube.bands()],
            row: 0.0,
            col: 0.0,
            member_count: 0,
        };
        n
    ];
    update_centers(cube, labels.as_slice(), &mut centers);
    centers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_cube(h: usize, w: usize, b: usize) -> HsiCube {
        HsiCube::new(h, w, b, vec![1.5; h * w * b]).unwrap()
    }

    #[test]
    fn distance_arithmetic() {
        assert_eq!(spectral_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(spectral_distance(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(spectral_distance(&[3.0], &[-1.0]).unwrap(), 16.0);
        assert!(spectral_distance(&[1.0], &[1.0, 2.0]).is_err());

        assert_eq!(spatial_distance((2.0, 2.0), (2.0, 2.0)), 0.0);
        assert_eq!(spatial_distance((0.0, 0.0), (3.0, 4.0)), 5.0);
        assert_eq!(spatial_distance((1.0, 1.0), (1.0, 4.0)), 3.0);

        assert_eq!(combined_distance(5.0, 5.0, 20.0, 10.0), 15.0);
        assert_eq!(combined_distance(7.0, 0.0, 20.0, 10.0), 7.0);
        assert_eq!(combined_distance(7.0, 3.0, 0.0, 10.0), 7.0);
    }

    #[test]
    fn grid_for_60x60() {
        assert_eq!(grid_interval(60, 60, 36), 10);
        let cube = constant_cube(60, 60, 1);
        let centers = init_centers(&cube, &HslicParams::new(36, 20.0)).unwrap();
        assert_eq!(centers.len(), 36);
        let expected = [5.0, 15.0, 25.0, 35.0, 45.0, 55.0];
        for c in &centers {
            assert!(expected.contains(&c.row) && expected.contains(&c.col));
        }
    }

    #[test]
    fn grid_single_center_and_partial_cells() {
        let cube = constant_cube(10, 10, 1);
        let centers = init_centers(&cube, &HslicParams::new(1, 20.0)).unwrap();
        assert_eq!(centers.len(), 1);
        assert_eq!((centers[0].row, centers[0].col), (5.0, 5.0));

        let cube = constant_cube(13, 7, 1);
        assert_eq!(grid_interval(13, 7, 6), 4);
        let centers = init_centers(&cube, &HslicParams::new(6, 20.0)).unwrap();
        assert_eq!(centers.len(), 8);
        for c in &centers {
            assert!(c.row < 13.0 && c.col < 7.0);
        }
    }

    #[test]
    fn too_many_superpixels() {
        let cube = constant_cube(2, 2, 1);
        assert!(init_centers(&cube, &HslicParams::new(5, 1.0)).is_err());
    }

    #[test]
    fn perturb_identity_cases() {
        let cube = constant_cube(20, 20, 3);
        let centers = init_centers(&cube, &HslicParams::new(4, 1.0)).unwrap();
        assert_eq!(perturb_centers(&cube, &centers, 3).unwrap(), centers);

        let noisy = HsiCube::from_fn(20, 20, 2, |r, c| vec![(r * 7 + c * 13) as f64 % 5.0, 1.0])
            .unwrap();
        let centers = init_centers(&noisy, &HslicParams::new(4, 1.0)).unwrap();
        assert_eq!(perturb_centers(&noisy, &centers, 1).unwrap(), centers);
        assert!(perturb_centers(&noisy, &centers, 2).is_err());
    }

    #[test]
    fn k_one_covers_everything() {
        let cube = HsiCube::from_fn(12, 9, 2, |r, c| vec![r as f64, (c * c) as f64]).unwrap();
        let res = run_hslic(&cube, &HslicParams::new(1, 20.0)).unwrap();
        assert_eq!(res.labels.num_segments(), 1);
        assert_eq!(res.centers.len(), 1);
        assert_eq!(res.centers[0].member_count, 108);
    }
}
