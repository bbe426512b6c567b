//! Spatially regularized reconstruction (SRT3D).
//!
//! The solver alternates three frame-synchronous steps:
//!
//! * a per-pixel data step: damped Gauss-Newton on `n‖z − Ψ_θ‖²` with a
//!   proximal term `‖θ − θ⁰‖²_D / (2μ)` that keeps each update close to the
//!   current estimate; `μ` is the proximal step size and `D` rescales depths
//!   and intensities to comparable units,
//! * a denoiser acting on the whole point cloud (the implicit regularizer),
//! * pruning of weak surfaces and birth of surfaces carried by neighbours.
//!
//! When the regularizer is enabled the starting point is built coarse to
//! fine: sketches are merged over 2×2 blocks up to the whole frame, the
//! coarsest block is fitted from scratch and each finer block starts from its
//! parent. A block keeps its parent's surfaces (refined under a Gaussian prior
//! centered on them) unless a fresh fit of the block beats that by more than a
//! fixed jump penalty. All work is proportional to the number of pixels and
//! sketch entries; photon counts never enter the cost.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::cloud::{PixelEstimate, PointCloudEstimate};
use crate::denoise::{
    merge_close, BilateralDenoiser, DenoiserKind, PointCloudDenoiser, WeightedMedianDenoiser, WindowParams,
};
use crate::error::{Error, Result};
use crate::model::{InstrumentResponse, LossGradient, Sketch, SketchModel, Surface};
use crate::pixelwise::{fit_pixel, fit_pixel_seeded, project_capped_simplex, FitOptions};
use crate::stream::{merge_sketches, SketchFrame};

const STEP_HALVINGS: usize = 4;

/// Settings of [`reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct Srt3dOptions {
    /// Pixelwise settings: `k_max`, minimum separation, initial fits.
    pub fit: FitOptions,
    pub outer_iters: usize,
    /// Data sub-steps per outer iteration.
    pub data_steps: usize,
    /// Proximal step size of the data step; 0 freezes the estimate.
    pub step_size: f64,
    /// Depth scale of the proximal metric, in bins.
    pub depth_scale: f64,
    /// Intensity scale of the proximal metric.
    pub intensity_scale: f64,
    pub denoiser: DenoiserKind,
    pub radius: usize,
    /// Depth gap (bins) separating two layers of neighbouring pixels.
    pub edge_threshold: f64,
    /// Weight in `[0, 1]` of the window average in the log-intensity update.
    pub intensity_smoothing: f64,
    pub prune_threshold: f64,
    pub birth: bool,
    /// Birth is considered when `n‖z − Ψ‖² / m` exceeds this.
    pub birth_residual: f64,
    /// Build the starting point from merged block sketches.
    pub coarse_to_fine: bool,
    /// Prior-anchored refinement steps per block of the coarse-to-fine start.
    pub init_steps: usize,
    /// Loss reduction a block's own fit needs to replace its parent's surfaces.
    pub jump_penalty: f64,
}

impl Srt3dOptions {
    /// Defaults: 10 outer iterations of 3 data steps, weighted median over a
    /// 5×5 window, layers split at three response widths, proximal scales of
    /// half a bin and 0.01 in intensity.
    pub fn new(fit: FitOptions, irf: &InstrumentResponse) -> Self {
        let width = irf.std_width().max(1.0);
        Self {
            prune_threshold: fit.prune_threshold,
            fit,
            outer_iters: 10,
            data_steps: 3,
            step_size: 1.0,
            depth_scale: 0.5,
            intensity_scale: 0.01,
            denoiser: DenoiserKind::WeightedMedian,
            radius: 2,
            edge_threshold: 3.0 * width,
            intensity_smoothing: 0.5,
            birth: true,
            birth_residual: 1.5,
            coarse_to_fine: true,
            init_steps: 10,
            jump_penalty: 40.0,
        }
    }

    /// Options under which [`reconstruct`] reduces to the pixelwise fit.
    pub fn disabled(fit: FitOptions, irf: &InstrumentResponse) -> Self {
        Self { denoiser: DenoiserKind::None, radius: 0, birth: false, coarse_to_fine: false, ..Self::new(fit, irf) }
    }

    pub fn regularizer_enabled(&self) -> bool {
        self.denoiser != DenoiserKind::None && self.radius > 0
    }

    pub fn validate(&self, model: &SketchModel) -> Result<()> {
        self.fit.validate(model.scheme())?;
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::InvalidParameter(format!("step size {} must be non-negative", self.step_size)));
        }
        if !(finite_pos(self.depth_scale) && finite_pos(self.intensity_scale)) {
            return Err(Error::InvalidParameter("proximal scales must be positive".into()));
        }
        if !(finite_pos(self.edge_threshold) && finite_pos(self.prune_threshold)) {
            return Err(Error::InvalidParameter("edge and prune thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity_smoothing) {
            return Err(Error::InvalidParameter("intensity smoothing must lie in [0, 1]".into()));
        }
        if !(self.birth_residual >= 0.0 && self.jump_penalty >= 0.0) {
            return Err(Error::InvalidParameter("birth and jump thresholds must be non-negative".into()));
        }
        if self.denoiser != DenoiserKind::None && self.radius == 0 {
            return Err(Error::InvalidParameter("denoiser window radius must be at least 1".into()));
        }
        Ok(())
    }

    fn window(&self) -> WindowParams {
        WindowParams {
            radius: self.radius,
            edge_threshold: self.edge_threshold,
            intensity_smoothing: self.intensity_smoothing,
            min_sep: self.fit.min_sep,
        }
    }

    /// The configured built-in denoiser, if any.
    pub fn make_denoiser(&self) -> Option<Box<dyn PointCloudDenoiser>> {
        match self.denoiser {
            _ if self.radius == 0 => None,
            DenoiserKind::WeightedMedian => Some(Box::new(WeightedMedianDenoiser(self.window()))),
            DenoiserKind::Bilateral => Some(Box::new(BilateralDenoiser(self.window()))),
            DenoiserKind::None => None,
        }
    }
}

/// Quadratic anchor `Σ p_t d(t, c_t)² + p_α (α − c_α)²`, with `d` the signed
/// circular depth difference.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    p_depth: f64,
    p_intensity: f64,
}

impl Anchor {
    fn proximal(opts: &Srt3dOptions) -> Self {
        let denom = 2.0 * opts.step_size;
        Self {
            p_depth: 1.0 / (denom * opts.depth_scale * opts.depth_scale),
            p_intensity: 1.0 / (denom * opts.intensity_scale * opts.intensity_scale),
        }
    }

    fn penalty(&self, xs: &[Surface], center: &[Surface], t_bins: f64) -> f64 {
        xs.iter()
            .zip(center)
            .map(|(x, c)| {
                self.p_depth * signed_gap(x.depth, c.depth, t_bins).powi(2)
                    + self.p_intensity * (x.intensity - c.intensity).powi(2)
            })
            .sum()
    }
}

fn signed_gap(a: f64, b: f64, t_bins: f64) -> f64 {
    let d = (a - b).rem_euclid(t_bins);
    if d > 0.5 * t_bins {
        d - t_bins
    } else {
        d
    }
}

fn separated(xs: &[Surface], min_sep: f64, t_bins: f64) -> bool {
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if signed_gap(xs[i].depth, xs[j].depth, t_bins).abs() < min_sep {
                return false;
            }
        }
    }
    true
}

/// One damped Gauss-Newton step on `n‖z − Ψ‖² + anchor(xs, center)`.
/// Returns the accepted point and its objective, or `None` if no trial along
/// the step lowered the objective.
fn anchored_step(
    z: &Sketch,
    model: &SketchModel,
    xs: &[Surface],
    center: &[Surface],
    anchor: Anchor,
    min_sep: f64,
    current: f64,
) -> Option<(Vec<Surface>, f64)> {
    let k = xs.len();
    let t_bins = model.scheme().t_bins() as f64;
    let n = z.count() as f64;
    let r = model.residual(z, xs);
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(2 * k);
    for s in xs {
        let atom = model.atom(s.depth);
        cols.push(atom.iter().zip(model.omegas()).map(|(a, w)| a * Complex64::new(0.0, w * s.intensity)).collect());
        cols.push(atom);
    }
    let dim = 2 * k;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| (a.conj() * b).re).sum();
            h[(i, j)] = 2.0 * n * v;
            h[(j, i)] = h[(i, j)];
        }
        g[i] = -2.0 * n * cols[i].iter().zip(&r).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
    }
    for (q, (x, c)) in xs.iter().zip(center).enumerate() {
        h[(2 * q, 2 * q)] += 2.0 * anchor.p_depth;
        h[(2 * q + 1, 2 * q + 1)] += 2.0 * anchor.p_intensity;
        g[2 * q] += 2.0 * anchor.p_depth * signed_gap(x.depth, c.depth, t_bins);
        g[2 * q + 1] += 2.0 * anchor.p_intensity * (x.intensity - c.intensity);
    }
    let scale = (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max);
    if !(scale > 0.0) || g.iter().all(|v| *v == 0.0) {
        return None;
    }
    for i in 0..dim {
        h[(i, i)] += 1e-10 * scale;
    }
    let delta = h.cholesky()?.solve(&(-g));
    let mut s = 1.0;
    for _ in 0..=STEP_HALVINGS {
        let alpha: Vec<f64> = xs.iter().enumerate().map(|(q, x)| x.intensity + s * delta[2 * q + 1]).collect();
        let alpha = project_capped_simplex(&alpha);
        let trial: Vec<Surface> = xs
            .iter()
            .enumerate()
            .map(|(q, x)| Surface::new(model.scheme().wrap_depth(x.depth + s * delta[2 * q]), alpha[q]))
            .collect();
        if separated(&trial, min_sep, t_bins) {
            let obj = model.weighted_loss(z, &trial) + anchor.penalty(&trial, center, t_bins);
            if obj <= current {
                return Some((trial, obj));
            }
        }
        s *= 0.5;
    }
    None
}

/// Minimizes `n‖z − Ψ‖² + anchor(·, center)` from `start` for `steps`
/// iterations. Returns the point and its objective.
fn anchored_refine(
    z: &Sketch,
    model: &SketchModel,
    start: &[Surface],
    center: &[Surface],
    anchor: Anchor,
    min_sep: f64,
    steps: usize,
) -> (Vec<Surface>, f64) {
    let t_bins = model.scheme().t_bins() as f64;
    let mut xs = start.to_vec();
    let mut obj = model.weighted_loss(z, &xs) + anchor.penalty(&xs, center, t_bins);
    for _ in 0..steps {
        match anchored_step(z, model, &xs, center, anchor, min_sep, obj) {
            Some((next, o)) => {
                xs = next;
                obj = o;
            }
            None => break,
        }
    }
    (xs, obj)
}

fn check_shapes(est: &PointCloudEstimate, frame: &SketchFrame, model: &SketchModel) -> Result<()> {
    if est.rows() != frame.rows() || est.cols() != frame.cols() || est.t_bins() != frame.scheme().t_bins() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {}x{} (T={}) vs frame {}x{} (T={})",
            est.rows(),
            est.cols(),
            est.t_bins(),
            frame.rows(),
            frame.cols(),
            frame.scheme().t_bins()
        )));
    }
    if frame.scheme() != model.scheme() {
        return Err(Error::SchemeMismatch("frame and model use different schemes".into()));
    }
    Ok(())
}

/// `steps` proximal Gauss-Newton updates per pixel. Each accepted sub-step
/// lowers `n‖z − Ψ‖² + ‖θ − θ_prev‖²_D/(2μ)` and hence the data loss itself.
/// Pixels without photons or surfaces are copied unchanged.
pub fn data_step(
    est: &PointCloudEstimate,
    frame: &SketchFrame,
    model: &SketchModel,
    opts: &Srt3dOptions,
) -> Result<PointCloudEstimate> {
    check_shapes(est, frame, model)?;
    if opts.step_size == 0.0 || opts.data_steps == 0 {
        return Ok(est.clone());
    }
    let anchor = Anchor::proximal(opts);
    let pixels = est
        .pixels()
        .par_iter()
        .zip(frame.sketches().par_iter())
        .map(|(px, z)| {
            if z.is_empty() || px.surfaces.is_empty() {
                return px.clone();
            }
            let mut xs = px.surfaces.clone();
            let mut loss = model.weighted_loss(z, &xs);
            for _ in 0..opts.data_steps {
                match anchored_step(z, model, &xs, &xs, anchor, opts.fit.min_sep, loss) {
                    Some((next, _)) => {
                        xs = next;
                        loss = model.weighted_loss(z, &xs);
                    }
                    None => break,
                }
            }
            PixelEstimate::new(xs, px.count)
        })
        .collect();
    Ok(PointCloudEstimate::from_parts_unchecked(est.rows(), est.cols(), est.t_bins(), pixels))
}

/// Summed data term `Σ_{i,j} n_{i,j} ‖z_{i,j} − Ψ_{θ_{i,j}}‖²`.
pub fn frame_objective(est: &PointCloudEstimate, frame: &SketchFrame, model: &SketchModel) -> Result<f64> {
    check_shapes(est, frame, model)?;
    Ok(est.pixels().iter().zip(frame.sketches()).map(|(px, z)| model.weighted_loss(z, &px.surfaces)).sum())
}

/// Gradient of [`frame_objective`], one entry per pixel in row-major order.
pub fn frame_gradient(est: &PointCloudEstimate, frame: &SketchFrame, model: &SketchModel) -> Result<Vec<LossGradient>> {
    check_shapes(est, frame, model)?;
    Ok(est.pixels().iter().zip(frame.sketches()).map(|(px, z)| model.weighted_gradient(z, &px.surfaces)).collect())
}

/// Runs the configured denoiser; identity when the regularizer is disabled.
pub fn denoise_step(est: &PointCloudEstimate, opts: &Srt3dOptions) -> PointCloudEstimate {
    match opts.make_denoiser() {
        Some(d) => d.denoise(est),
        None => est.clone(),
    }
}

/// Layers of the window around `(r, c)` excluding the pixel itself, as
/// `(support, depth, intensity)` with weighted-median depth and intensity.
fn neighbour_layers(est: &PointCloudEstimate, r: usize, c: usize, radius: usize, threshold: f64) -> (usize, Vec<(usize, f64, f64)>) {
    let mut members: Vec<(f64, f64, f64)> = Vec::new();
    let mut occupied = 0;
    for rr in r.saturating_sub(radius)..=(r + radius).min(est.rows() - 1) {
        for cc in c.saturating_sub(radius)..=(c + radius).min(est.cols() - 1) {
            if (rr, cc) == (r, c) {
                continue;
            }
            let px = est.pixel(rr, cc);
            if !px.surfaces.is_empty() {
                occupied += 1;
            }
            for s in &px.surfaces {
                members.push((s.depth, s.intensity, (s.intensity * px.count as f64).max(1e-12)));
            }
        }
    }
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let mut layers = Vec::new();
    let mut start = 0;
    for i in 1..=members.len() {
        if i == members.len() || members[i].0 - members[i - 1].0 > threshold {
            let group = &members[start..i];
            if !group.is_empty() {
                layers.push((group.len(), weighted_median_of(group, |m| m.0), weighted_median_of(group, |m| m.1)));
            }
            start = i;
        }
    }
    (occupied, layers)
}

fn weighted_median_of(group: &[(f64, f64, f64)], key: impl Fn(&(f64, f64, f64)) -> f64) -> f64 {
    let mut items: Vec<(f64, f64)> = group.iter().map(|m| (key(m), m.2)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut acc = 0.0;
    for &(v, w) in &items {
        acc += w;
        if acc >= 0.5 * total {
            return v;
        }
    }
    items.last().map_or(0.0, |i| i.0)
}

/// Removes weak surfaces and, when enabled, adds the best-supported
/// neighbour layer to pixels whose residual is large and which lack it.
pub fn prune_and_birth(
    est: &PointCloudEstimate,
    frame: &SketchFrame,
    model: &SketchModel,
    opts: &Srt3dOptions,
) -> Result<PointCloudEstimate> {
    check_shapes(est, frame, model)?;
    let (rows, cols) = (est.rows(), est.cols());
    let radius = opts.radius.max(1);
    let m = model.m() as f64;
    let pixels = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let px = est.pixel(r, c);
            let mut surfaces: Vec<Surface> =
                px.surfaces.iter().copied().filter(|s| s.intensity >= opts.prune_threshold).collect();
            if !opts.birth || surfaces.len() >= opts.fit.k_max {
                return PixelEstimate::new(surfaces, px.count);
            }
            let z = frame.sketch(r, c);
            let energy = if z.is_empty() { f64::INFINITY } else { model.weighted_loss(z, &surfaces) / m };
            if energy <= opts.birth_residual {
                return PixelEstimate::new(surfaces, px.count);
            }
            let (occupied, layers) = neighbour_layers(est, r, c, radius, opts.edge_threshold);
            let t_bins = est.t_bins() as f64;
            let best = layers
                .into_iter()
                .filter(|&(support, depth, _)| {
                    2 * support >= occupied.max(1)
                        && surfaces.iter().all(|s| signed_gap(s.depth, depth, t_bins).abs() >= opts.fit.min_sep.max(opts.edge_threshold))
                })
                .max_by(|a, b| a.0.cmp(&b.0));
            if let Some((_, depth, intensity)) = best {
                let room = (1.0 - surfaces.iter().map(|s| s.intensity).sum::<f64>()).max(0.0);
                let alpha = intensity.min(room);
                if alpha >= opts.prune_threshold {
                    surfaces.push(Surface::new(depth, alpha));
                }
            }
            PixelEstimate::new(surfaces, px.count)
        })
        .collect();
    Ok(PointCloudEstimate::from_parts_unchecked(rows, cols, est.t_bins(), pixels))
}

/// Sketches merged over `2^level` blocks.
struct Level {
    rows: usize,
    cols: usize,
    sketches: Vec<Sketch>,
}

fn pyramid(frame: &SketchFrame) -> Result<Vec<Level>> {
    let mut levels =
        vec![Level { rows: frame.rows(), cols: frame.cols(), sketches: frame.sketches().to_vec() }];
    loop {
        let prev = levels.last().expect("at least one level");
        if prev.rows == 1 && prev.cols == 1 {
            break;
        }
        let rows = prev.rows.div_ceil(2);
        let cols = prev.cols.div_ceil(2);
        let sketches = (0..rows * cols)
            .into_par_iter()
            .map(|idx| {
                let (r, c) = (idx / cols, idx % cols);
                let at = |rr: usize, cc: usize| {
                    (rr < prev.rows && cc < prev.cols).then(|| &prev.sketches[rr * prev.cols + cc])
                };
                // diagonal and off-diagonal pairs are merged separately so the
                // result is bit-identical for the transposed frame
                let (r0, c0) = (2 * r, 2 * c);
                let diag = merge_pair(at(r0, c0), at(r0 + 1, c0 + 1))?;
                let off = merge_pair(at(r0, c0 + 1), at(r0 + 1, c0))?;
                merge_pair(diag.as_ref(), off.as_ref()).map(|s| s.unwrap_or_else(|| Sketch::empty(frame.scheme().m())))
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(Level { rows, cols, sketches });
    }
    Ok(levels)
}

/// Order-independent merge: `merge(a, b)` and `merge(b, a)` agree bit for bit.
fn merge_pair(a: Option<&Sketch>, b: Option<&Sketch>) -> Result<Option<Sketch>> {
    match (a, b) {
        (Some(a), Some(b)) => {
            if a.m() != b.m() {
                return Err(Error::SchemeMismatch("cannot merge sketches of different sizes".into()));
            }
            if a.is_empty() || b.is_empty() {
                return merge_sketches(a, b).map(Some);
            }
            let (na, nb) = (a.count() as f64, b.count() as f64);
            let n = na + nb;
            let values = a.values().iter().zip(b.values()).map(|(x, y)| (x * na + y * nb) / n).collect();
            Sketch::from_parts(values, a.count() + b.count()).map(Some)
        }
        (Some(a), None) | (None, Some(a)) => Ok(Some(a.clone())),
        (None, None) => Ok(None),
    }
}

fn own_fit(z: &Sketch, model: &SketchModel, opts: &FitOptions, seeds: &[f64]) -> Option<(Vec<Surface>, f64)> {
    let fit = if seeds.is_empty() { fit_pixel(z, model, opts) } else { fit_pixel_seeded(z, model, opts, seeds) };
    fit.ok().map(|f| (f.params.surfaces().to_vec(), f.loss))
}

/// Coarse-to-fine starting point (see the module docs).
fn coarse_to_fine(frame: &SketchFrame, model: &SketchModel, opts: &Srt3dOptions) -> Result<Vec<Vec<Surface>>> {
    let levels = pyramid(frame)?;
    let anchor = Anchor::proximal(&Srt3dOptions { step_size: 1.0, ..opts.clone() });
    let top = levels.last().expect("non-empty pyramid");
    let mut parent: Vec<Vec<Surface>> =
        vec![own_fit(&top.sketches[0], model, &opts.fit, &[]).map(|f| f.0).unwrap_or_default()];
    let mut parent_cols = 1;
    for level in levels.iter().rev().skip(1) {
        let current: Vec<Vec<Surface>> = (0..level.rows * level.cols)
            .into_par_iter()
            .map(|idx| {
                let (r, c) = (idx / level.cols, idx % level.cols);
                let prior = &parent[(r / 2) * parent_cols + c / 2];
                let z = &level.sketches[idx];
                if z.is_empty() {
                    return prior.clone();
                }
                let (kept, kept_obj) =
                    anchored_refine(z, model, prior, prior, anchor, opts.fit.min_sep, opts.init_steps);
                let seeds: Vec<f64> = prior.iter().map(|s| s.depth).collect();
                let chosen = match own_fit(z, model, &opts.fit, &seeds) {
                    Some((own, loss)) if loss + opts.jump_penalty < kept_obj => own,
                    _ => kept,
                };
                chosen.into_iter().filter(|s| s.intensity >= opts.prune_threshold).collect()
            })
            .collect();
        parent = current;
        parent_cols = level.cols;
    }
    Ok(parent)
}

/// Starting estimate of [`reconstruct`].
pub fn initial_estimate(frame: &SketchFrame, model: &SketchModel, opts: &Srt3dOptions) -> Result<PointCloudEstimate> {
    let surfaces: Vec<Vec<Surface>> = if opts.coarse_to_fine && opts.regularizer_enabled() {
        coarse_to_fine(frame, model, opts)?
    } else {
        frame
            .sketches()
            .par_iter()
            .map(|z| own_fit(z, model, &opts.fit, &[]).map(|f| f.0).unwrap_or_default())
            .collect()
    };
    let pixels = surfaces
        .into_iter()
        .zip(frame.sketches())
        .map(|(s, z)| PixelEstimate::new(merge_close(s, opts.fit.min_sep), z.count()))
        .collect();
    PointCloudEstimate::new(frame.rows(), frame.cols(), frame.scheme().t_bins(), pixels)
}

/// Runs the configured number of `[data_step; denoise_step; prune_and_birth]`
/// rounds from `est`.
pub fn refine(
    mut est: PointCloudEstimate,
    frame: &SketchFrame,
    model: &SketchModel,
    opts: &Srt3dOptions,
) -> Result<PointCloudEstimate> {
    for _ in 0..opts.outer_iters {
        est = data_step(&est, frame, model, opts)?;
        est = denoise_step(&est, opts);
        est = prune_and_birth(&est, frame, model, opts)?;
    }
    Ok(est)
}

/// Regularized reconstruction of a whole frame.
pub fn reconstruct(frame: &SketchFrame, model: &SketchModel, opts: &Srt3dOptions) -> Result<PointCloudEstimate> {
    opts.validate(model)?;
    if frame.scheme() != model.scheme() {
        return Err(Error::SchemeMismatch("frame and model use different schemes".into()));
    }
    if frame.total_photons() == 0 {
        return Err(Error::EmptyFrame);
    }
    let est = initial_estimate(frame, model, opts)?;
    refine(est, frame, model, opts)
}
