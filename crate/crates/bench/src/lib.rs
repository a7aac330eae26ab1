//! Shared fixtures for the criterion benches.

use mapslic::synthetic::{self, Scene};

/// A noisy four-quadrant scene of the given side length and band count.
pub fn bench_scene(size: usize, bands: usize) -> Scene {
    synthetic::quadrants(size, bands, 0.5, 42)
}
