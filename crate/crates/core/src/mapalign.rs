//! Map-to-image alignment and polygon-guided superpixel merging.
//!
//! Pixel coordinates follow the convention used throughout the crate: pixel
//! (row, col) has its center at image coordinates `(col, row)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsio::{ControlPoints, MapPolygon, PolygonSet};
use crate::labels::{DisjointSet, LabelMap};

/// `col = a[0]*x + a[1]*y + a[2]`, `row = b[0]*x + b[1]*y + b[2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub coeffs: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn new(coeffs: [[f64; 3]; 2]) -> Result<Self> {
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite affine coefficient".into()));
        }
        let t = Self { coeffs };
        if t.determinant().abs() <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "affine linear part is singular (det = {:e})",
                t.determinant()
            )));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            coeffs: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn determinant(&self) -> f64 {
        let [a, b] = self.coeffs;
        a[0] * b[1] - a[1] * b[0]
    }

    /// Maps a map coordinate to `(col, row)` image coordinates.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b] = self.coeffs;
        (a[0] * x + a[1] * y + a[2], b[0] * x + b[1] * y + b[2])
    }
}

/// Least-squares affine fit and its RMS residual in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub transform: AffineTransform,
    pub rms_residual: f64,
}

/// Fits the affine transform minimizing the summed squared pixel error over
/// all control points.
///
/// Coordinates are centered before solving the 2×2 normal equations, which
/// keeps the system well conditioned for large map coordinates.
pub fn fit_affine(points: &ControlPoints) -> Result<AffineFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::ControlPoints(format!(
            "need at least 3 control points, got {n}"
        )));
    }
    let nf = n as f64;
    let (mut mx, mut my, mut mc, mut mr) = (0.0, 0.0, 0.0, 0.0);
    for p in &points.pairs {
        mx += p.map_x;
        my += p.map_y;
        mc += p.pixel_col;
        mr += p.pixel_row;
    }
    mx /= nf;
    my /= nf;
    mc /= nf;
    mr /= nf;

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut sxc, mut syc, mut sxr, mut syr) = (0.0, 0.0, 0.0, 0.0);
    for p in &points.pairs {
        let (x, y) = (p.map_x - mx, p.map_y - my);
        let (c, r) = (p.pixel_col - mc, p.pixel_row - mr);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxc += x * c;
        syc += y * c;
        sxr += x * r;
        syr += y * r;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy).powi(2);
    if scale == 0.0 || det <= 1e-12 * scale {
        return Err(Error::ControlPoints(
            "control points are collinear; the affine fit is singular".into(),
        ));
    }
    // inverse of [[sxx, sxy], [sxy, syy]]
    let solve = |bx: f64, by: f64| ((syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det);
    let (a0, a1) = solve(sxc, syc);
    let (b0, b1) = solve(sxr, syr);
    let a2 = mc - a0 * mx - a1 * my;
    let b2 = mr - b0 * mx - b1 * my;
    let transform = AffineTransform::new([[a0, a1, a2], [b0, b1, b2]])?;

    let sse: f64 = points
        .pairs
        .iter()
        .map(|p| {
            let (c, r) = transform.apply(p.map_x, p.map_y);
            (c - p.pixel_col).powi(2) + (r - p.pixel_row).powi(2)
        })
        .sum();
    Ok(AffineFit {
        transform,
        rms_residual: (sse / nf).sqrt(),
    })
}

/// Per-pixel polygon membership after alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonMask {
    height: usize,
    width: usize,
    ids: Vec<Option<u32>>,
    classes: BTreeMap<u32, String>,
}

impl PolygonMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ids: vec![None; height * width],
            classes: BTreeMap::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[Option<u32>] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<u32> {
        self.ids[row * self.width + col]
    }

    pub fn class_of(&self, id: u32) -> Option<&str> {
        self.classes.get(&id).map(String::as_str)
    }

    pub fn masked_pixels(&self) -> usize {
        self.ids.iter().filter(|v| v.is_some()).count()
    }
}

/// Pixels of one polygon (given in image coordinates) by the even-odd rule
/// evaluated at pixel centers, via scanline crossings.
fn scan_polygon(rings: &[Vec<(f64, f64)>], height: usize, width: usize) -> Vec<usize> {
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for ring in rings {
        for &(_, y) in ring {
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    let r_lo = min_y.ceil().max(0.0);
    let r_hi = max_y.floor().min(height as f64 - 1.0);
    if r_lo > r_hi {
        return Vec::new();
    }

    let mut out = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for r in (r_lo as usize)..=(r_hi as usize) {
        let py = r as f64;
        xs.clear();
        for ring in rings {
            let n = ring.len();
            for i in 0..n {
                let (xi, yi) = ring[i];
                let (xj, yj) = ring[(i + n - 1) % n];
                if (yi > py) != (yj > py) {
                    xs.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                }
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        // a center at px is inside iff an odd number of crossings lie strictly right of it
        for c in 0..width {
            let px = c as f64;
            let right = xs.len() - xs.partition_point(|&x| x <= px);
            if right % 2 == 1 {
                out.push(r * width + c);
            }
        }
    }
    out
}

fn to_image_rings(polygon: &MapPolygon, transform: &AffineTransform) -> Vec<Vec<(f64, f64)>> {
    polygon
        .rings
        .iter()
        .map(|ring| ring.iter().map(|&[x, y]| transform.apply(x, y)).collect())
        .collect()
}

/// Rasterizes aligned polygons onto an H×W grid. A pixel inside several
/// polygons takes the lowest polygon id.
pub fn rasterize(
    polygons: &PolygonSet,
    transform: &AffineTransform,
    height: usize,
    width: usize,
) -> PolygonMask {
    let mut ordered: Vec<&MapPolygon> = polygons.iter().collect();
    ordered.sort_by_key(|p| p.id);
    let covered: Vec<(u32, Vec<usize>)> = ordered
        .par_iter()
        .map(|p| (p.id, scan_polygon(&to_image_rings(p, transform), height, width)))
        .collect();

    let mut mask = PolygonMask::empty(height, width);
    for p in &ordered {
        mask.classes.insert(p.id, p.class.clone());
    }
    for (id, pixels) in covered {
        for idx in pixels {
            mask.ids[idx].get_or_insert(id);
        }
    }
    mask
}

/// Result of polygon-guided merging.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub labels: LabelMap,
    /// Class tag of every output label that overlapped a polygon.
    pub tags: BTreeMap<u32, String>,
}

/// Smallest positive overlap fraction: a single shared pixel triggers a merge.
pub const ANY_OVERLAP: f64 = f64::MIN_POSITIVE;

/// Union-merges all superpixels overlapping a common polygon.
///
/// A superpixel overlaps a polygon when the fraction of its pixels carrying
/// that polygon's id in `mask` is at least `min_overlap` (and non-zero).
/// Merging is transitive across polygons. A merged label takes the class of
/// the lowest polygon id it overlaps. Output labels are compact.
pub fn merge_by_polygon(labels: &LabelMap, mask: &PolygonMask, min_overlap: f64) -> Result<MergeResult> {
    if labels.height() != mask.height() || labels.width() != mask.width() {
        return Err(Error::DimensionMismatch(format!(
            "labels are {}x{}, mask is {}x{}",
            labels.height(),
            labels.width(),
            mask.height(),
            mask.width()
        )));
    }
    if !(0.0..=1.0).contains(&min_overlap) || min_overlap.is_nan() {
        return Err(Error::InvalidParam(format!(
            "min_overlap must lie in [0, 1], got {min_overlap}"
        )));
    }
    let labels = labels.compacted();
    let sizes = labels.segment_sizes();

    // (polygon id, superpixel) -> shared pixel count
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&l, id) in labels.as_slice().iter().zip(mask.ids()) {
        if let Some(id) = id {
            *overlap.entry((*id, l)).or_default() += 1;
        }
    }

    let mut ds = DisjointSet::new(sizes.len());
    let mut first_polygon: BTreeMap<u32, u32> = BTreeMap::new();
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&(id, l), &count) in &overlap {
        let frac = count as f64 / sizes[l as usize] as f64;
        if count > 0 && frac >= min_overlap {
            members.entry(id).or_default().push(l);
        }
    }
    for (&id, sps) in &members {
        for &l in sps {
            ds.union(sps[0] as usize, l as usize);
            first_polygon.entry(l).or_insert(id);
        }
    }

    let merged: Vec<u32> = labels
        .as_slice()
        .iter()
        .map(|&l| ds.find(l as usize) as u32)
        .collect();
    let merged = LabelMap::new(labels.height(), labels.width(), merged)?;
    let out = merged.compacted();

    // map union-find roots to compact ids
    let mut root_to_out: BTreeMap<u32, u32> = BTreeMap::new();
    for (&root, &o) in merged.as_slice().iter().zip(out.as_slice()) {
        root_to_out.entry(root).or_insert(o);
    }
    let mut best_polygon: BTreeMap<u32, u32> = BTreeMap::new();
    for (&l, &id) in &first_polygon {
        let o = root_to_out[&(ds.find(l as usize) as u32)];
        let e = best_polygon.entry(o).or_insert(id);
        *e = (*e).min(id);
    }
    let tags = best_polygon
        .into_iter()
        .filter_map(|(o, id)| mask.class_of(id).map(|c| (o, c.to_string())))
        .collect();
    Ok(MergeResult { labels: out, tags })
}
