use crate::error::{Error, Result};
use crate::model::{sort_by_depth, Surface};

/// Reconstruction of one pixel: its surfaces and the photon count it was
/// estimated from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelEstimate {
    pub surfaces: Vec<Surface>,
    pub count: u64,
}

impl PixelEstimate {
    pub fn new(mut surfaces: Vec<Surface>, count: u64) -> Self {
        sort_by_depth(&mut surfaces);
        Self { surfaces, count }
    }

    pub fn signal(&self) -> f64 {
        self.surfaces.iter().map(|s| s.intensity).sum()
    }
}

/// Per-pixel surface lists for a whole frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudEstimate {
    rows: usize,
    cols: usize,
    t_bins: u32,
    pixels: Vec<PixelEstimate>,
}

impl PointCloudEstimate {
    pub fn new(rows: usize, cols: usize, t_bins: u32, pixels: Vec<PixelEstimate>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} estimate needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        for (idx, p) in pixels.iter().enumerate() {
            let (row, col) = (idx / cols, idx % cols);
            for s in &p.surfaces {
                if !(s.depth.is_finite() && s.depth >= 0.0 && s.depth < t_bins as f64) {
                    return Err(Error::InvalidParameter(format!("pixel ({row}, {col}): depth {} outside [0, {t_bins})", s.depth)));
                }
                if !(s.intensity.is_finite() && s.intensity >= 0.0) {
                    return Err(Error::InvalidParameter(format!("pixel ({row}, {col}): bad intensity {}", s.intensity)));
                }
            }
            if p.signal() > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!("pixel ({row}, {col}): intensities sum to {}", p.signal())));
            }
            if p.surfaces.windows(2).any(|w| w[0].depth > w[1].depth) {
                return Err(Error::InvalidParameter(format!("pixel ({row}, {col}): surfaces not sorted by depth")));
            }
        }
        Ok(Self { rows, cols, t_bins, pixels })
    }

    /// Estimate with no surfaces anywhere.
    pub fn empty(rows: usize, cols: usize, t_bins: u32) -> Result<Self> {
        Self::new(rows, cols, t_bins, vec![PixelEstimate::default(); rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn t_bins(&self) -> u32 {
        self.t_bins
    }

    pub fn pixels(&self) -> &[PixelEstimate] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &PixelEstimate {
        &self.pixels[row * self.cols + col]
    }

    pub fn total_surfaces(&self) -> usize {
        self.pixels.iter().map(|p| p.surfaces.len()).sum()
    }

    pub fn into_pixels(self) -> Vec<PixelEstimate> {
        self.pixels
    }

    /// Estimate whose rows and columns are swapped.
    pub fn transposed(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                pixels.push(self.pixel(r, c).clone());
            }
        }
        Self { rows: self.cols, cols: self.rows, t_bins: self.t_bins, pixels }
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, t_bins: u32, pixels: Vec<PixelEstimate>) -> Self {
        debug_assert_eq!(pixels.len(), rows * cols);
        Self { rows, cols, t_bins, pixels }
    }
}
