//! Synthetic scenes with known structure, used by tests, benches and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::HsiCube;
use crate::hsio::{ControlPoint, ControlPoints, MapPolygon, PolygonSet};
use crate::labels::LabelMap;

/// A generated cube and the region each pixel was drawn from.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub truth: LabelMap,
    /// The noise-free spectrum of every region.
    pub spectra: Vec<Vec<f64>>,
}

/// Distinct, well-separated spectrum for region `q`.
pub fn region_spectrum(q: usize, bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|b| 10.0 * (q as f64 + 1.0) + (q as f64 - 1.5) * b as f64 * 0.5)
        .collect()
}

pub fn constant_cube(height: usize, width: usize, bands: usize, value: f64) -> HsiCube {
    HsiCube::new(height, width, bands, vec![value; height * width * bands])
        .expect("valid dimensions")
}

/// Builds a scene from a region map and per-region spectra, adding
/// independent Gaussian noise of standard deviation `noise`.
pub fn from_regions(truth: LabelMap, spectra: Vec<Vec<f64>>, noise: f64, seed: u64) -> Scene {
    let bands = spectra[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let cube = HsiCube::from_fn(truth.height(), truth.width(), bands, |r, c| {
        spectra[truth.get(r, c) as usize]
            .iter()
            .map(|v| if noise > 0.0 { v + normal.sample(&mut rng) } else { *v })
            .collect()
    })
    .expect("spectra have equal length");
    Scene {
        cube,
        truth,
        spectra,
    }
}

/// `size`×`size` image split into four quadrants with distinct spectra.
pub fn quadrants(size: usize, bands: usize, noise: f64, seed: u64) -> Scene {
    let half = size / 2;
    let labels = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            (u32::from(r >= half) << 1) | u32::from(c >= half)
        })
        .collect();
    let truth = LabelMap::new(size, size, labels).expect("square map");
    let spectra = (0..4).map(|q| region_spectrum(q, bands)).collect();
    from_regions(truth, spectra, noise, seed)
}

/// Left and right halves with two different constant spectra.
pub fn two_halves(height: usize, width: usize, bands: usize) -> Scene {
    let half = width / 2;
    let labels = (0..height * width)
        .map(|i| u32::from(i % width >= half))
        .collect();
    let truth = LabelMap::new(height, width, labels).expect("valid map");
    let spectra = (0..2).map(|q| region_spectrum(q, bands)).collect();
    from_regions(truth, spectra, 0.0, 0)
}

/// Vertical stripes of equal width, one spectrum per stripe.
pub fn stripes(height: usize, width: usize, bands: usize, count: usize, noise: f64, seed: u64) -> Scene {
    let labels = (0..height * width)
        .map(|i| ((i % width) * count / width) as u32)
        .collect();
    let truth = LabelMap::new(height, width, labels).expect("valid map");
    let spectra = (0..count).map(|q| region_spectrum(q, bands)).collect();
    from_regions(truth, spectra, noise, seed)
}

/// A scene with map polygons and the control points that align them.
#[derive(Debug, Clone)]
pub struct GuidedScene {
    pub scene: Scene,
    pub polygons: PolygonSet,
    pub control_points: ControlPoints,
    /// Pixels (row, col) covered by the building polygon.
    pub building: Vec<(usize, usize)>,
}

/// Map coordinates of pixel (row, col): a 2 m grid, north up, offset origin.
pub fn pixel_to_map(row: f64, col: f64) -> (f64, f64) {
    (500.0 + 2.0 * col, 1000.0 - 2.0 * row)
}

/// Four quadrants plus one "building" polygon straddling the boundary
/// between the two upper quadrants.
pub fn guided_quadrants(size: usize, bands: usize, noise: f64, seed: u64) -> GuidedScene {
    let scene = quadrants(size, bands, noise, seed);
    let (r0, r1) = (size / 20, size / 5);
    let (c0, c1) = (3 * size / 10, 7 * size / 10);
    // edges half a pixel outside the covered pixel centers
    let corners = [
        (r0 as f64 - 0.5, c0 as f64 - 0.5),
        (r0 as f64 - 0.5, c1 as f64 - 0.5),
        (r1 as f64 - 0.5, c1 as f64 - 0.5),
        (r1 as f64 - 0.5, c0 as f64 - 0.5),
    ];
    let ring = corners
        .iter()
        .map(|&(r, c)| {
            let (x, y) = pixel_to_map(r, c);
            [x, y]
        })
        .collect();
    let polygons = PolygonSet::new(vec![MapPolygon {
        id: 0,
        class: "building".into(),
        rings: vec![ring],
    }])
    .expect("one valid polygon");
    let last = (size - 1) as f64;
    let control_points = ControlPoints::new(
        [(0.0, 0.0), (0.0, last), (last, 0.0), (last, last), (last / 2.0, last / 3.0)]
            .iter()
            .map(|&(row, col)| {
                let (map_x, map_y) = pixel_to_map(row, col);
                ControlPoint {
                    map_x,
                    map_y,
                    pixel_col: col,
                    pixel_row: row,
                }
            })
            .collect(),
    );
    let building = (r0..r1)
        .flat_map(|r| (c0..c1).map(move |c| (r, c)))
        .collect();
    GuidedScene {
        scene,
        polygons,
        control_points,
        building,
    }
}
