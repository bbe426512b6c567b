//! Synthetic photon frames drawn from the mixture observation model.
//!
//! Each pixel draws a Poisson photon count, assigns every photon to a surface
//! or to the background, and places it on the fine grid. Signal photons use
//! the discrete response `h/H` shifted by the surface depth and wrapped modulo
//! `T`, so the simulated law is the one whose characteristic function the
//! solvers fit. A fractional shift is realized by randomized rounding between
//! the two neighbouring integer offsets.
//!
//! Reproducibility: pixel `p` (row-major index) draws from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `p`, so results do not
//! depend on thread scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sort_by_depth, InstrumentResponse, Surface};
use crate::stream::PhotonFrame;

/// Ground-truth scene: per pixel, the present surfaces with depths in bins and
/// relative intensities summing to one (background excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneReference {
    rows: usize,
    cols: usize,
    t_bins: u32,
    pixels: Vec<Vec<Surface>>,
}

const REL_TOL: f64 = 1e-6;

impl SceneReference {
    pub fn new(rows: usize, cols: usize, t_bins: u32, mut pixels: Vec<Vec<Surface>>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} scene needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        for (idx, surfaces) in pixels.iter_mut().enumerate() {
            validate_truth_pixel(surfaces, t_bins).map_err(|msg| {
                Error::InvalidParameter(format!("pixel ({}, {}): {msg}", idx / cols, idx % cols))
            })?;
            sort_by_depth(surfaces);
        }
        Ok(Self { rows, cols, t_bins, pixels })
    }

    /// Single fronto-parallel plane at `depth` in every pixel.
    pub fn plane(rows: usize, cols: usize, t_bins: u32, depth: f64) -> Result<Self> {
        Self::new(rows, cols, t_bins, vec![vec![Surface::new(depth, 1.0)]; rows * cols])
    }

    /// Two planes: `near` for columns left of `cols/2`, `far` elsewhere.
    pub fn step_edge(rows: usize, cols: usize, t_bins: u32, near: f64, far: f64) -> Result<Self> {
        let pixels = (0..rows * cols)
            .map(|i| vec![Surface::new(if i % cols < cols / 2 { near } else { far }, 1.0)])
            .collect();
        Self::new(rows, cols, t_bins, pixels)
    }

    /// Semi-transparent foreground layer in front of a background layer, both
    /// present in every pixel, in the spirit of a scene seen through a net.
    pub fn two_layer(rows: usize, cols: usize, t_bins: u32, front: Surface, back: Surface) -> Result<Self> {
        let total = front.intensity + back.intensity;
        let pixels = vec![
            vec![
                Surface::new(front.depth, front.intensity / total),
                Surface::new(back.depth, back.intensity / total),
            ];
            rows * cols
        ];
        Self::new(rows, cols, t_bins, pixels)
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

    pub fn pixels(&self) -> &[Vec<Surface>] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[Surface] {
        &self.pixels[row * self.cols + col]
    }

    /// Largest number of surfaces in any pixel.
    pub fn max_surfaces(&self) -> usize {
        self.pixels.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total_surfaces(&self) -> usize {
        self.pixels.iter().map(Vec::len).sum()
    }

    /// Surfaces with every intensity multiplied by `factor`, e.g. the signal
    /// fraction `SBR/(1+SBR)` to express ground truth as mixture weights.
    pub fn scaled_surfaces(&self, factor: f64) -> Vec<Vec<Surface>> {
        self.pixels
            .iter()
            .map(|p| p.iter().map(|s| Surface::new(s.depth, s.intensity * factor)).collect())
            .collect()
    }
}

pub(crate) fn validate_truth_pixel(surfaces: &[Surface], t_bins: u32) -> std::result::Result<(), String> {
    if surfaces.is_empty() {
        return Ok(());
    }
    for s in surfaces {
        if !(s.depth.is_finite() && s.depth >= 0.0 && s.depth < t_bins as f64) {
            return Err(format!("depth {} outside [0, {t_bins})", s.depth));
        }
        if !(s.intensity.is_finite() && s.intensity >= 0.0) {
            return Err(format!("negative intensity {}", s.intensity));
        }
    }
    let total: f64 = surfaces.iter().map(|s| s.intensity).sum();
    if (total - 1.0).abs() > REL_TOL {
        return Err(format!("relative intensities sum to {total}, expected 1"));
    }
    Ok(())
}

/// Acquisition settings for one synthetic frame.
#[derive(Debug, Clone)]
pub struct AcquisitionConfig {
    /// Mean photons per pixel `λ`.
    pub photons_per_pixel: f64,
    /// Expected signal over expected background photons; may be infinite.
    pub sbr: f64,
    pub irf: InstrumentResponse,
    pub seed: u64,
    /// Optional per-pixel multiplier of `λ` (row-major), e.g. albedo.
    pub flux_map: Option<Vec<f64>>,
}

impl AcquisitionConfig {
    pub fn new(photons_per_pixel: f64, sbr: f64, irf: InstrumentResponse, seed: u64) -> Result<Self> {
        let cfg = Self { photons_per_pixel, sbr, irf, seed, flux_map: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photons_per_pixel.is_finite() && self.photons_per_pixel > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mean photons per pixel must be positive, got {}",
                self.photons_per_pixel
            )));
        }
        if self.sbr.is_nan() || self.sbr <= 0.0 {
            return Err(Error::InvalidParameter(format!("SBR must be positive, got {}", self.sbr)));
        }
        if let Some(map) = &self.flux_map {
            if map.iter().any(|f| !f.is_finite() || *f < 0.0) {
                return Err(Error::InvalidParameter("flux multipliers must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Background weight `α_0 = 1/(1+SBR)`.
    pub fn background_weight(&self) -> f64 {
        background_weight(self.sbr)
    }
}

/// `α_0 = 1/(1+SBR)`; zero for an infinite SBR.
pub fn background_weight(sbr: f64) -> f64 {
    if sbr.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + sbr)
    }
}

/// Deterministic generator for pixel `index` of a frame seeded with `seed`.
pub fn pixel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Precomputed sampling tables for the discrete response.
#[derive(Debug, Clone)]
pub struct PhotonSampler {
    irf_index: WeightedIndex<f64>,
    center: f64,
    t_bins: u32,
}

impl PhotonSampler {
    pub fn new(irf: &InstrumentResponse, t_bins: u32) -> Result<Self> {
        if irf.len() > t_bins as usize {
            return Err(Error::InvalidParameter(format!("impulse response longer than T = {t_bins}")));
        }
        let irf_index = WeightedIndex::new(irf.samples().iter().copied())
            .map_err(|e| Error::InvalidParameter(format!("impulse response: {e}")))?;
        Ok(Self { irf_index, center: irf.center(), t_bins })
    }

    /// One signal photon from a surface at `depth`, wrapped into `[0, T)`.
    pub fn signal<R: Rng + ?Sized>(&self, depth: f64, rng: &mut R) -> u32 {
        let u = self.irf_index.sample(rng) as f64;
        let s = depth - self.center + u;
        let base = s.floor();
        let frac = s - base;
        let x = if frac > 0.0 && rng.random::<f64>() < frac { base + 1.0 } else { base };
        (x as i64).rem_euclid(self.t_bins as i64) as u32
    }

    pub fn background<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(0..self.t_bins)
    }
}

/// Photon time stamps for one pixel.
///
/// `truth` holds relative intensities; a pixel without surfaces emits
/// background photons only.
pub fn sample_pixel_photons<R: Rng + ?Sized>(
    truth: &[Surface],
    photons_per_pixel: f64,
    sbr: f64,
    sampler: &PhotonSampler,
    rng: &mut R,
) -> Vec<u32> {
    let n = if photons_per_pixel > 0.0 {
        Poisson::new(photons_per_pixel).map(|d| d.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let alpha0 = if truth.is_empty() { 1.0 } else { background_weight(sbr) };
    let total_rel: f64 = truth.iter().map(|s| s.intensity).sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        if u < alpha0 || total_rel <= 0.0 {
            out.push(sampler.background(rng));
            continue;
        }
        // pick surface k with probability proportional to its relative intensity
        let mut v = (u - alpha0) / (1.0 - alpha0) * total_rel;
        let mut chosen = truth.len() - 1;
        for (k, s) in truth.iter().enumerate() {
            if v < s.intensity {
                chosen = k;
                break;
            }
            v -= s.intensity;
        }
        out.push(sampler.signal(truth[chosen].depth, rng));
    }
    out
}

/// Simulates every pixel of a scene.
pub fn simulate_frame(scene: &SceneReference, cfg: &AcquisitionConfig) -> Result<PhotonFrame> {
    cfg.validate()?;
    if let Some(map) = &cfg.flux_map {
        if map.len() != scene.rows() * scene.cols() {
            return Err(Error::DimensionMismatch(format!(
                "flux map has {} entries for a {}x{} scene",
                map.len(),
                scene.rows(),
                scene.cols()
            )));
        }
    }
    let sampler = PhotonSampler::new(&cfg.irf, scene.t_bins())?;
    let pixels = scene
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(idx, truth)| {
            let mut rng = pixel_rng(cfg.seed, idx as u64);
            let lambda = cfg.photons_per_pixel * cfg.flux_map.as_ref().map_or(1.0, |m| m[idx]);
            sample_pixel_photons(truth, lambda, cfg.sbr, &sampler, &mut rng)
        })
        .collect();
    PhotonFrame::new(scene.rows(), scene.cols(), scene.t_bins(), pixels)
}

/// Coarse histogram with `bins` bins of `width` fine bins each.
pub fn histogram(xs: &[u32], bins: usize, width: u32, t_bins: u32) -> Result<Vec<u64>> {
    if width == 0 || bins as u64 * width as u64 != t_bins as u64 {
        return Err(Error::BadBinning { bins, width, t_bins });
    }
    let mut counts = vec![0u64; bins];
    for &x in xs {
        if x >= t_bins {
            return Err(Error::OutOfRange { stamp: x as u64, t_bins });
        }
        counts[(x / width) as usize] += 1;
    }
    Ok(counts)
}
