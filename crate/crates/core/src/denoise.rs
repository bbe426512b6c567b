//! Point-cloud denoisers used as the plug-and-play regularizer.
//!
//! A denoiser maps a frame of per-pixel surface lists to a new frame of the
//! same shape. It reads a frozen snapshot and writes a fresh estimate, so the
//! result never depends on the order pixels are visited. Surfaces of
//! neighbouring pixels are put in correspondence by depth proximity: within a
//! window, a surface's layer is the set of neighbour surfaces closer than the
//! edge threshold. A surface whose layer is supported by fewer than half of
//! the occupied window pixels is treated as an outlier and snapped to the
//! best-supported layer of the window.

use rayon::prelude::*;

use crate::cloud::{PixelEstimate, PointCloudEstimate};
use crate::model::Surface;

/// Smallest intensity used when averaging in the log domain.
const LOG_FLOOR: f64 = 1e-6;

/// Frame-level denoiser.
pub trait PointCloudDenoiser: Sync {
    fn denoise(&self, est: &PointCloudEstimate) -> PointCloudEstimate;
}

/// Which built-in denoiser to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    WeightedMedian,
    Bilateral,
    None,
}

/// Window settings shared by the built-in denoisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub radius: usize,
    /// Surfaces of neighbouring pixels closer than this belong to one layer.
    pub edge_threshold: f64,
    /// Blend factor in `[0, 1]` between a surface's log-intensity and the
    /// layer average.
    pub intensity_smoothing: f64,
    /// Two surfaces of one pixel closer than this are merged after denoising.
    pub min_sep: f64,
}

/// Depth = intensity-and-count weighted median of the layer.
#[derive(Debug, Clone, Copy)]
pub struct WeightedMedianDenoiser(pub WindowParams);

/// Depth = spatially and range-weighted mean of the layer.
#[derive(Debug, Clone, Copy)]
pub struct BilateralDenoiser(pub WindowParams);

impl PointCloudDenoiser for WeightedMedianDenoiser {
    fn denoise(&self, est: &PointCloudEstimate) -> PointCloudEstimate {
        denoise_with(est, &self.0, |layer, _| weighted_median(layer))
    }
}

impl PointCloudDenoiser for BilateralDenoiser {
    fn denoise(&self, est: &PointCloudEstimate) -> PointCloudEstimate {
        let p = self.0;
        let sigma_s = (p.radius as f64 / 2.0).max(0.5);
        let sigma_r = (p.edge_threshold / 2.0).max(f64::MIN_POSITIVE);
        denoise_with(est, &p, |layer, center| {
            let mut num = 0.0;
            let mut den = 0.0;
            for m in layer {
                let ws = (-(m.dist2 as f64) / (2.0 * sigma_s * sigma_s)).exp();
                let wr = (-(m.depth - center).powi(2) / (2.0 * sigma_r * sigma_r)).exp();
                let w = ws * wr * m.weight;
                num += w * m.depth;
                den += w;
            }
            if den > 0.0 {
                num / den
            } else {
                center
            }
        })
    }
}

/// A neighbour surface taking part in one layer.
#[derive(Debug, Clone, Copy)]
struct Member {
    depth: f64,
    intensity: f64,
    weight: f64,
    /// Squared pixel distance to the window center.
    dist2: usize,
}

fn weighted_median(layer: &[Member]) -> f64 {
    let mut items: Vec<(f64, f64)> = layer.iter().map(|m| (m.depth, m.weight)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut acc = 0.0;
    for &(d, w) in &items {
        acc += w;
        if acc >= 0.5 * total {
            return d;
        }
    }
    items.last().map_or(0.0, |i| i.0)
}

/// Applies `depth_rule` to every surface's layer and smooths log-intensities.
fn denoise_with<F>(est: &PointCloudEstimate, p: &WindowParams, depth_rule: F) -> PointCloudEstimate
where
    F: Fn(&[Member], f64) -> f64 + Sync,
{
    let (rows, cols) = (est.rows(), est.cols());
    if p.radius == 0 {
        return est.clone();
    }
    let any_weight = est.pixels().iter().any(|px| px.count > 0 && px.signal() > 0.0);
    let pixels: Vec<PixelEstimate> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let me = est.pixel(r, c);
            if me.surfaces.is_empty() {
                return me.clone();
            }
            let window = gather_window(est, r, c, p.radius, any_weight);
            let occupied = window.iter().filter(|w| !w.is_empty()).count();
            let mut out: Vec<Surface> = Vec::with_capacity(me.surfaces.len());
            for s in &me.surfaces {
                let mut layer = layer_of(&window, s.depth, p.edge_threshold);
                if 2 * layer.len() < occupied {
                    // unsupported: move to the strongest layer not already held
                    if let Some(alt) = strongest_layer(&window, p.edge_threshold, &me.surfaces, s) {
                        layer = alt;
                    }
                }
                let depth = depth_rule(&layer, s.depth);
                let intensity = smooth_intensity(s.intensity, &layer, p.intensity_smoothing);
                out.push(Surface::new(depth.clamp(0.0, est.t_bins() as f64 - 1e-9), intensity));
            }
            PixelEstimate::new(merge_close(out, p.min_sep), me.count)
        })
        .collect();
    PointCloudEstimate::from_parts_unchecked(rows, cols, est.t_bins(), pixels)
}

/// Surfaces of every window pixel with their reliability weights.
fn gather_window(est: &PointCloudEstimate, r: usize, c: usize, radius: usize, any_weight: bool) -> Vec<Vec<Member>> {
    let (rows, cols) = (est.rows(), est.cols());
    let r0 = r.saturating_sub(radius);
    let r1 = (r + radius).min(rows - 1);
    let c0 = c.saturating_sub(radius);
    let c1 = (c + radius).min(cols - 1);
    let mut window = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for rr in r0..=r1 {
        for cc in c0..=c1 {
            let px = est.pixel(rr, cc);
            let dist2 = rr.abs_diff(r).pow(2) + cc.abs_diff(c).pow(2);
            window.push(
                px.surfaces
                    .iter()
                    .map(|s| Member {
                        depth: s.depth,
                        intensity: s.intensity,
                        // counts act as reliability weights only
                        weight: if any_weight { s.intensity * px.count as f64 } else { 1.0 },
                        dist2,
                    })
                    .collect(),
            );
        }
    }
    window
}

/// Closest surface of each window pixel within `threshold` of `depth`, in a
/// content-defined order so sums do not depend on how the window was walked.
fn layer_of(window: &[Vec<Member>], depth: f64, threshold: f64) -> Vec<Member> {
    let mut layer: Vec<Member> = window
        .iter()
        .filter_map(|px| {
            px.iter()
                .filter(|m| (m.depth - depth).abs() <= threshold)
                .min_by(|a, b| (a.depth - depth).abs().total_cmp(&(b.depth - depth).abs()))
                .copied()
        })
        .collect();
    layer.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.intensity.total_cmp(&b.intensity))
            .then(a.weight.total_cmp(&b.weight))
            .then(a.dist2.cmp(&b.dist2))
    });
    layer
}

/// Best-supported layer of the window whose center is not already occupied
/// by another surface of the pixel.
fn strongest_layer(window: &[Vec<Member>], threshold: f64, own: &[Surface], current: &Surface) -> Option<Vec<Member>> {
    let mut best: Option<(usize, f64, f64, Vec<Member>)> = None;
    for px in window {
        for m in px {
            let taken = own
                .iter()
                .any(|s| !std::ptr::eq(s, current) && (s.depth - m.depth).abs() <= threshold);
            if taken {
                continue;
            }
            let layer = layer_of(window, m.depth, threshold);
            let weight: f64 = layer.iter().map(|x| x.weight).sum();
            let better = match &best {
                None => true,
                Some((n, w, d, _)) => (layer.len(), weight, -m.depth) > (*n, *w, -*d),
            };
            if better {
                best = Some((layer.len(), weight, m.depth, layer));
            }
        }
    }
    best.map(|b| b.3)
}

fn smooth_intensity(own: f64, layer: &[Member], blend: f64) -> f64 {
    if blend <= 0.0 || layer.is_empty() || own <= 0.0 {
        return own;
    }
    let mean_log = layer.iter().map(|m| m.intensity.max(LOG_FLOOR).ln()).sum::<f64>() / layer.len() as f64;
    ((1.0 - blend) * own.max(LOG_FLOOR).ln() + blend * mean_log).exp()
}

/// Sorts, merges surfaces closer than `min_sep` and keeps `Σα ≤ 1`.
pub(crate) fn merge_close(mut surfaces: Vec<Surface>, min_sep: f64) -> Vec<Surface> {
    surfaces.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let mut out: Vec<Surface> = Vec::with_capacity(surfaces.len());
    for s in surfaces {
        match out.last_mut() {
            Some(prev) if s.depth - prev.depth < min_sep => {
                let w = prev.intensity + s.intensity;
                if w > 0.0 {
                    prev.depth = (prev.depth * prev.intensity + s.depth * s.intensity) / w;
                }
                prev.intensity = w;
            }
            _ => out.push(s),
        }
    }
    let total: f64 = out.iter().map(|s| s.intensity).sum();
    if total > 1.0 {
        for s in &mut out {
            s.intensity /= total;
        }
    }
    out
}
