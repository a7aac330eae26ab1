//! In-memory hyperspectral cube.

use crate::error::{Error, Result};

/// An H×W×B hyperspectral image stored band-interleaved-by-pixel, so each
/// pixel's spectrum is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// Builds a cube from values in (row, col, band) order.
    ///
    /// Rejects empty dimensions, a data length that does not match, and any
    /// non-finite value.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidParam(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "cube data has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let band = pos % bands;
            let pixel = pos / bands;
            return Err(Error::NonFinite {
                row: pixel / width,
                col: pixel % width,
                band,
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            wavelengths: None,
        })
    }

    /// Builds a cube by evaluating `f(row, col)` for every pixel spectrum.
    pub fn from_fn<F>(height: usize, width: usize, bands: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity(height * width * bands);
        for r in 0..height {
            for c in 0..width {
                let spectrum = f(r, c);
                if spectrum.len() != bands {
                    return Err(Error::DimensionMismatch(format!(
                        "spectrum at ({r},{c}) has {} bands, expected {bands}",
                        spectrum.len()
                    )));
                }
                data.extend_from_slice(&spectrum);
            }
        }
        Self::new(height, width, bands, data)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::DimensionMismatch(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// All values, pixel-major: `data[(row * width + col) * bands + band]`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        self.spectrum(row * self.width + col)
    }

    /// Spectrum of the pixel with flat row-major index `idx`.
    #[inline]
    pub fn spectrum(&self, idx: usize) -> &[f64] {
        let start = idx * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Per-band mean over all pixels.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.bands];
        for px in self.data.chunks_exact(self.bands) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        let n = self.num_pixels() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-band population variance over all pixels.
    pub fn band_variance(&self) -> Vec<f64> {
        let mean = self.mean_spectrum();
        let mut var = vec![0.0; self.bands];
        for px in self.data.chunks_exact(self.bands) {
            for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let n = self.num_pixels() as f64;
        var.iter_mut().for_each(|s| *s /= n);
        var
    }
}
