//! Online accumulation of per-pixel sketches.
//!
//! A sketch is a running mean of unit phasors `e^{iω_ℓ x}`; it is updated in
//! constant time per photon and never retains the photons themselves.
//! Partial sketches of the same pixel combine through [`merge_sketches`].

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FrequencyScheme, Sketch};

/// Per-pixel photon time stamps on the fine grid `{0, …, T-1}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonFrame {
    rows: usize,
    cols: usize,
    t_bins: u32,
    pixels: Vec<Vec<u32>>,
}

impl PhotonFrame {
    pub fn new(rows: usize, cols: usize, t_bins: u32, pixels: Vec<Vec<u32>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!("frame must be at least 1x1, got {rows}x{cols}")));
        }
        if pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} frame needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        if t_bins == 0 {
            return Err(Error::InvalidParameter("T must be positive".into()));
        }
        for stamps in &pixels {
            if let Some(&x) = stamps.iter().find(|&&x| x >= t_bins) {
                return Err(Error::OutOfRange { stamp: x as u64, t_bins });
            }
        }
        Ok(Self { rows, cols, t_bins, pixels })
    }

    /// Frame with no photons.
    pub fn empty(rows: usize, cols: usize, t_bins: u32) -> Result<Self> {
        Self::new(rows, cols, t_bins, vec![Vec::new(); rows * cols])
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

    pub fn pixels(&self) -> &[Vec<u32>] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u32] {
        &self.pixels[row * self.cols + col]
    }

    pub fn total_photons(&self) -> u64 {
        self.pixels.iter().map(|p| p.len() as u64).sum()
    }

    pub fn into_pixels(self) -> Vec<Vec<u32>> {
        self.pixels
    }
}

/// Grid of sketches, one per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchFrame {
    rows: usize,
    cols: usize,
    scheme: FrequencyScheme,
    sketches: Vec<Sketch>,
}

impl SketchFrame {
    pub fn new(rows: usize, cols: usize, scheme: FrequencyScheme, sketches: Vec<Sketch>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!("frame must be at least 1x1, got {rows}x{cols}")));
        }
        if sketches.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} frame needs {} sketches, got {}",
                rows * cols,
                sketches.len()
            )));
        }
        if let Some(s) = sketches.iter().find(|s| s.m() != scheme.m()) {
            return Err(Error::SchemeMismatch(format!("sketch of size {} in a frame with m = {}", s.m(), scheme.m())));
        }
        Ok(Self { rows, cols, scheme, sketches })
    }

    /// All-empty frame ready for streaming updates.
    pub fn empty(rows: usize, cols: usize, scheme: FrequencyScheme) -> Result<Self> {
        Self::new(rows, cols, scheme, vec![Sketch::empty(scheme.m()); rows * cols])
    }

    /// Sketches every pixel of a photon frame (data-parallel over pixels).
    pub fn from_photons(frame: &PhotonFrame, scheme: &FrequencyScheme) -> Result<Self> {
        if frame.t_bins() != scheme.t_bins() {
            return Err(Error::SchemeMismatch(format!(
                "photon frame has T = {}, scheme has T = {}",
                frame.t_bins(),
                scheme.t_bins()
            )));
        }
        let sketches = frame
            .pixels()
            .par_iter()
            .map(|stamps| sketch_from_list(stamps, scheme))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frame.rows(), frame.cols(), *scheme, sketches)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scheme(&self) -> &FrequencyScheme {
        &self.scheme
    }

    pub fn sketches(&self) -> &[Sketch] {
        &self.sketches
    }

    pub fn sketch(&self, row: usize, col: usize) -> &Sketch {
        &self.sketches[row * self.cols + col]
    }

    /// Feeds one photon into the sketch of pixel `(row, col)`.
    pub fn update(&mut self, row: usize, col: usize, stamp: u32) -> Result<()> {
        let idx = row * self.cols + col;
        update_sketch(&mut self.sketches[idx], stamp, &self.scheme)
    }

    pub fn total_photons(&self) -> u64 {
        self.sketches.iter().map(Sketch::count).sum()
    }

    /// Frame storage in bytes: `m` complex values and one counter per pixel.
    pub fn payload_bytes(&self) -> usize {
        self.sketches.len() * (self.scheme.m() * std::mem::size_of::<Complex64>() + std::mem::size_of::<u64>())
    }

    /// Frame whose rows and columns are swapped.
    pub fn transposed(&self) -> Self {
        let mut sketches = Vec::with_capacity(self.sketches.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                sketches.push(self.sketch(r, c).clone());
            }
        }
        Self { rows: self.cols, cols: self.rows, scheme: self.scheme, sketches }
    }
}

/// Writes `e^{iω_ℓ x}` for `ℓ = 1..m` into `out`.
fn phasors(x: u32, scheme: &FrequencyScheme, out: &mut [Complex64]) {
    let base = Complex64::cis(scheme.omega(1) * x as f64);
    let mut cur = base;
    for slot in out.iter_mut() {
        *slot = cur;
        cur *= base;
    }
}

fn check_stamp(x: u32, scheme: &FrequencyScheme) -> Result<()> {
    if x >= scheme.t_bins() {
        return Err(Error::OutOfRange { stamp: x as u64, t_bins: scheme.t_bins() });
    }
    Ok(())
}

/// Adds one photon with a running-mean update, keeping `|z_ℓ| ≤ 1` at all times.
pub fn update_sketch(s: &mut Sketch, x: u32, scheme: &FrequencyScheme) -> Result<()> {
    check_stamp(x, scheme)?;
    if s.m() != scheme.m() {
        return Err(Error::SchemeMismatch(format!("sketch has {} entries, scheme has {}", s.m(), scheme.m())));
    }
    let n1 = (s.count + 1) as f64;
    let base = Complex64::cis(scheme.omega(1) * x as f64);
    let mut cur = base;
    for z in s.values.iter_mut() {
        *z += (cur - *z) / n1;
        cur *= base;
    }
    s.count += 1;
    Ok(())
}

/// Batch empirical characteristic function of a stamp list.
pub fn sketch_from_list(xs: &[u32], scheme: &FrequencyScheme) -> Result<Sketch> {
    let m = scheme.m();
    if xs.is_empty() {
        return Ok(Sketch::empty(m));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); m];
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for &x in xs {
        check_stamp(x, scheme)?;
        phasors(x, scheme, &mut buf);
        for (a, p) in acc.iter_mut().zip(&buf) {
            *a += p;
        }
    }
    let n = xs.len() as f64;
    Ok(Sketch { values: acc.into_iter().map(|a| a / n).collect(), count: xs.len() as u64 })
}

/// Count-weighted mean of two sketches of the same scheme.
pub fn merge_sketches(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    if a.m() != b.m() {
        return Err(Error::SchemeMismatch(format!("cannot merge sketches of size {} and {}", a.m(), b.m())));
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    let (na, nb) = (a.count as f64, b.count as f64);
    let n = na + nb;
    let values = a.values.iter().zip(&b.values).map(|(za, zb)| (za * na + zb * nb) / n).collect();
    Ok(Sketch { values, count: a.count + b.count })
}

/// Sketch of a coarse histogram, placing each bin's counts at the mean stamp
/// of the bin, `ℓ'Δt + (Δt-1)/2`.
pub fn sketch_from_histogram(counts: &[u64], width: u32, scheme: &FrequencyScheme) -> Result<Sketch> {
    if width == 0 || counts.len() as u64 * width as u64 != scheme.t_bins() as u64 {
        return Err(Error::BadBinning { bins: counts.len(), width, t_bins: scheme.t_bins() });
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyHistogram);
    }
    let omegas = scheme.omegas();
    let offset = 0.5 * (width as f64 - 1.0);
    let mut acc = vec![Complex64::new(0.0, 0.0); scheme.m()];
    for (bin, &y) in counts.iter().enumerate() {
        if y == 0 {
            continue;
        }
        let center = bin as f64 * width as f64 + offset;
        for (a, w) in acc.iter_mut().zip(&omegas) {
            *a += Complex64::cis(w * center) * y as f64;
        }
    }
    Ok(Sketch { values: acc.into_iter().map(|a| a / n as f64).collect(), count: n })
}
