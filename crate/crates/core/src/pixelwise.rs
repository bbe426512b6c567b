//! Per-pixel sketched estimation.
//!
//! Minimizes `n‖z - Ψ_θ‖²` independently for every pixel. The model is linear
//! in the intensities and oscillatory in the depths, so the solver treats the
//! two blocks differently: intensities are always the nonnegative least
//! squares solution for the current depths, and depths move by damped
//! Gauss-Newton steps on the resulting reduced loss (the Jacobian is projected
//! onto the orthogonal complement of the active atoms) with a backtracking line
//! search. Initial depths come from peaks of the matched-filter backprojection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::cloud::{PixelEstimate, PointCloudEstimate};
use crate::error::{Error, Result};
use crate::model::{FrequencyScheme, InstrumentResponse, PixelParams, Sketch, SketchModel, Surface};
use crate::stream::SketchFrame;

/// Column pairs more coherent than this make the intensity problem singular.
pub const MAX_COHERENCE: f64 = 1.0 - 1e-6;

const LINE_SEARCH_HALVINGS: usize = 30;

/// Settings of [`fit_pixel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Largest number of surfaces per pixel.
    pub k_max: usize,
    /// Spacing of the backprojection grid, in bins.
    pub grid_step: f64,
    /// Minimum circular distance between two depths of one pixel.
    pub min_sep: f64,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub tol: f64,
    /// Surfaces with a smaller intensity are removed and the rest refitted.
    pub prune_threshold: f64,
}

impl FitOptions {
    /// Defaults for a scheme and response: grid step `T/(4m)`, minimum
    /// separation twice the response width, prune threshold 0.02.
    pub fn new(scheme: &FrequencyScheme, irf: &InstrumentResponse, k_max: usize) -> Self {
        Self {
            k_max,
            grid_step: scheme.t_bins() as f64 / (4.0 * scheme.m() as f64),
            min_sep: irf.default_min_sep(),
            max_iters: 50,
            tol: 1e-12,
            prune_threshold: 0.02,
        }
    }

    pub fn validate(&self, scheme: &FrequencyScheme) -> Result<()> {
        let nyquist = scheme.t_bins() as f64 / (2.0 * scheme.m() as f64);
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        if 2 * self.k_max > scheme.m() {
            return Err(Error::InvalidParameter(format!(
                "sketch size m = {} cannot identify {} surfaces (need m >= 2K)",
                scheme.m(),
                self.k_max
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= nyquist) {
            return Err(Error::InvalidParameter(format!(
                "grid step {} must lie in (0, T/(2m)] = (0, {nyquist}]",
                self.grid_step
            )));
        }
        if !(self.min_sep > 0.0 && self.tol >= 0.0 && self.prune_threshold > 0.0 && self.max_iters > 0) {
            return Err(Error::InvalidParameter("fit options must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted pixel parameters and the loss they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFit {
    pub params: PixelParams,
    pub loss: f64,
    pub iterations: usize,
}

/// `g(t) = Re Σ_ℓ z_ℓ conj(ĥ(ω_ℓ)/H) e^{-iω_ℓ t}` on each grid depth.
pub fn backproject(z: &Sketch, model: &SketchModel, grid: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::EmptySketch);
    }
    model.check_len(z)?;
    Ok(backproject_values(z.values(), model, grid))
}

fn backproject_values(values: &[Complex64], model: &SketchModel, grid: &[f64]) -> Vec<f64> {
    let weighted: Vec<Complex64> = values.iter().zip(model.spectrum()).map(|(z, a)| z * a.conj()).collect();
    grid.iter()
        .map(|&t| {
            weighted
                .iter()
                .zip(model.omegas())
                .map(|(c, w)| (c * Complex64::cis(-w * t)).re)
                .sum()
        })
        .collect()
}

/// Uniform depth grid `0, step, 2·step, …` below `T`.
pub fn depth_grid(t_bins: u32, step: f64) -> Vec<f64> {
    let count = (t_bins as f64 / step).ceil() as usize;
    (0..count).map(|i| i as f64 * step).filter(|&t| t < t_bins as f64).collect()
}

/// Up to `k` well-separated backprojection peaks, returned in depth order.
pub fn init_depths(z: &Sketch, model: &SketchModel, k: usize, opts: &FitOptions) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::EmptySketch);
    }
    model.check_len(z)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    Ok(pick_peaks(z.values(), model, k, opts, &[]))
}

/// Greedy peak picking on the backprojection of `values`, skipping peaks
/// within `min_sep` of `taken` or of each other.
fn pick_peaks(values: &[Complex64], model: &SketchModel, k: usize, opts: &FitOptions, taken: &[f64]) -> Vec<f64> {
    let scheme = model.scheme();
    let grid = depth_grid(scheme.t_bins(), opts.grid_step);
    let g = backproject_values(values, model, &grid);
    let len = g.len();
    let mut peaks: Vec<usize> = (0..len)
        .filter(|&i| {
            let prev = g[(i + len - 1) % len];
            let next = g[(i + 1) % len];
            g[i] > 0.0 && g[i] > prev && g[i] >= next
        })
        .collect();
    // highest first; equal heights resolved by the lower depth
    peaks.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let mut chosen: Vec<f64> = Vec::with_capacity(k);
    for i in peaks {
        if chosen.len() == k {
            break;
        }
        let t = grid[i];
        let clear = chosen
            .iter()
            .chain(taken)
            .all(|&c| scheme.circular_distance(c, t) >= opts.min_sep);
        if clear {
            chosen.push(t);
        }
    }
    chosen.sort_by(f64::total_cmp);
    chosen
}

/// Real inner product `Re Σ conj(u) v`.
fn rdot(u: &[Complex64], v: &[Complex64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

fn coherence(a: &[Complex64], b: &[Complex64]) -> f64 {
    let inner: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na = rdot(a, a).sqrt();
    let nb = rdot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    inner.norm() / (na * nb)
}

/// Intensities for fixed depths: nonnegative least squares of `z` on the
/// atoms, then Euclidean projection onto `{α ≥ 0, Σα ≤ 1}`.
pub fn solve_alpha(z: &Sketch, depths: &[f64], model: &SketchModel) -> Result<Vec<f64>> {
    model.check_len(z)?;
    let atoms: Vec<Vec<Complex64>> = depths.iter().map(|&t| model.atom(t)).collect();
    solve_alpha_atoms(z.values(), &atoms)
}

fn solve_alpha_atoms(values: &[Complex64], atoms: &[Vec<Complex64>]) -> Result<Vec<f64>> {
    let k = atoms.len();
    for i in 0..k {
        for j in i + 1..k {
            let c = coherence(&atoms[i], &atoms[j]);
            if c > MAX_COHERENCE {
                return Err(Error::IllConditioned { coherence: c });
            }
        }
    }
    let gram = DMatrix::from_fn(k, k, |i, j| rdot(&atoms[i], &atoms[j]));
    let rhs = DVector::from_iterator(k, atoms.iter().map(|a| rdot(a, values)));
    let alpha = nnls_normal(&gram, &rhs);
    Ok(project_capped_simplex(&alpha))
}

/// Lawson-Hanson active-set NNLS expressed on the normal equations.
fn nnls_normal(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Vec<f64> {
    let k = rhs.len();
    let scale = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let eps = 1e-14 * scale;
    let mut x = vec![0.0; k];
    let mut passive = vec![false; k];
    for _ in 0..3 * k + 3 {
        let w: Vec<f64> = (0..k).map(|i| rhs[i] - (0..k).map(|j| gram[(i, j)] * x[j]).sum::<f64>()).collect();
        let next = (0..k)
            .filter(|&i| !passive[i] && w[i] > eps)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = next else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[(idx[a], idx[b])]);
            let sub_rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| rhs[i]));
            let sol = match sub.clone().cholesky() {
                Some(ch) => ch.solve(&sub_rhs),
                None => match sub.lu().solve(&sub_rhs) {
                    Some(s) => s,
                    None => return x,
                },
            };
            let mut s = vec![0.0; k];
            for (a, &i) in idx.iter().enumerate() {
                s[i] = sol[a];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut step = 1.0f64;
            for &i in &idx {
                if s[i] <= 0.0 {
                    step = step.min(x[i] / (x[i] - s[i]));
                }
            }
            for i in 0..k {
                x[i] += step * (s[i] - x[i]);
            }
            for &i in &idx {
                if x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Euclidean projection onto `{α ≥ 0, Σα ≤ 1}`.
pub fn project_capped_simplex(alpha: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = alpha.iter().map(|a| a.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    // projection onto the probability simplex
    let mut sorted = alpha.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cum += v;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    alpha.iter().map(|a| (a - shift).max(0.0)).collect()
}

/// Closed-form single-surface depth from the phase of the first entry.
pub fn closed_form_depth_k1(z: &Sketch, model: &SketchModel) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptySketch);
    }
    model.check_len(z)?;
    let first = z.values()[0];
    if first.norm() < 1e-12 {
        return Err(Error::ZeroMagnitude);
    }
    let phase = (first * model.spectrum()[0].conj()).arg();
    let scheme = model.scheme();
    Ok(scheme.wrap_depth(phase / scheme.omega(1)))
}

/// Depths, intensities and loss at one point of the reduced problem.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub depths: Vec<f64>,
    pub alpha: Vec<f64>,
    pub loss: f64,
}

impl Candidate {
    pub fn surfaces(&self) -> Vec<Surface> {
        self.depths.iter().zip(&self.alpha).map(|(&d, &a)| Surface::new(d, a)).collect()
    }
}

fn well_separated(depths: &[f64], scheme: &FrequencyScheme, min_sep: f64) -> bool {
    if depths.len() < 2 {
        return true;
    }
    let t_len = scheme.t_bins() as f64;
    let gaps_ok = depths.windows(2).all(|w| w[1] - w[0] >= min_sep);
    gaps_ok && depths[0] + t_len - depths[depths.len() - 1] >= min_sep
}

/// Evaluates the reduced loss at `depths` (wrapped and sorted).
fn evaluate(z: &Sketch, model: &SketchModel, depths: &[f64], min_sep: f64) -> Option<Candidate> {
    let scheme = model.scheme();
    let mut depths: Vec<f64> = depths.iter().map(|&t| scheme.wrap_depth(t)).collect();
    depths.sort_by(f64::total_cmp);
    if !well_separated(&depths, scheme, min_sep) {
        return None;
    }
    let atoms: Vec<Vec<Complex64>> = depths.iter().map(|&t| model.atom(t)).collect();
    let alpha = solve_alpha_atoms(z.values(), &atoms).ok()?;
    let mut psi = vec![Complex64::new(0.0, 0.0); model.m()];
    for (atom, a) in atoms.iter().zip(&alpha) {
        for (p, v) in psi.iter_mut().zip(atom) {
            *p += v * a;
        }
    }
    let loss = z.count() as f64 * z.values().iter().zip(&psi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    Some(Candidate { depths, alpha, loss })
}

/// Damped Gauss-Newton descent on the depths; intensities re-solved at every
/// trial point. Accepted steps never increase the loss.
///
/// A surface whose intensity is pinned at zero has no depth gradient; it is
/// moved to the strongest peak of the residual backprojection instead.
pub(crate) fn refine_depths(
    z: &Sketch,
    model: &SketchModel,
    start: &[f64],
    opts: &FitOptions,
) -> Option<(Candidate, usize)> {
    let min_sep = opts.min_sep;
    let mut cur = evaluate(z, model, start, min_sep)?;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        if cur.depths.is_empty() || cur.loss == 0.0 {
            break;
        }
        if let Some(moved) = relocate_idle(z, model, &cur, opts) {
            iterations += 1;
            cur = moved;
            continue;
        }
        let Some(step) = gauss_newton_step(z, model, &cur) else { break };
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let trial: Vec<f64> = cur.depths.iter().zip(&step).map(|(t, d)| t + scale * d).collect();
            if let Some(c) = evaluate(z, model, &trial, min_sep) {
                if c.loss < cur.loss {
                    accepted = Some(c);
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else { break };
        iterations += 1;
        let decrease = cur.loss - next.loss;
        cur = next;
        if decrease <= opts.tol * (cur.loss + decrease) {
            break;
        }
    }
    Some((cur, iterations))
}

/// Moves every zero-intensity surface to the best free residual peak; returns
/// the new point only if it lowers the loss.
fn relocate_idle(z: &Sketch, model: &SketchModel, cur: &Candidate, opts: &FitOptions) -> Option<Candidate> {
    if cur.alpha.iter().all(|&a| a > 0.0) {
        return None;
    }
    let mut kept: Vec<f64> = cur.depths.iter().zip(&cur.alpha).filter(|(_, &a)| a > 0.0).map(|(&d, _)| d).collect();
    let idle = cur.depths.len() - kept.len();
    let psi = model.cf(&cur.surfaces());
    let residual: Vec<Complex64> = z.values().iter().zip(&psi).map(|(a, b)| a - b).collect();
    let extra = pick_peaks(&residual, model, idle, opts, &kept);
    if extra.is_empty() {
        return None;
    }
    kept.extend(extra);
    let next = evaluate(z, model, &kept, opts.min_sep)?;
    (next.loss < cur.loss).then_some(next)
}

/// Gauss-Newton direction for the depths of the reduced problem.
fn gauss_newton_step(z: &Sketch, model: &SketchModel, cur: &Candidate) -> Option<Vec<f64>> {
    let k = cur.depths.len();
    let atoms: Vec<Vec<Complex64>> = cur.depths.iter().map(|&t| model.atom(t)).collect();
    let mut residual: Vec<Complex64> = z.values().to_vec();
    for (atom, a) in atoms.iter().zip(&cur.alpha) {
        for (r, v) in residual.iter_mut().zip(atom) {
            *r -= v * a;
        }
    }
    // dΨ/dt_k = iω α_k atom_k; the residual moves by the negative of it
    let mut jac: Vec<Vec<Complex64>> = atoms
        .iter()
        .zip(&cur.alpha)
        .map(|(atom, &a)| {
            atom.iter()
                .zip(model.omegas())
                .map(|(v, w)| Complex64::new(0.0, w * a) * v)
                .collect()
        })
        .collect();
    // remove the component explained by re-fitting the active intensities
    let active: Vec<usize> = (0..k).filter(|&i| cur.alpha[i] > 0.0).collect();
    if !active.is_empty() {
        let gram = DMatrix::from_fn(active.len(), active.len(), |i, j| rdot(&atoms[active[i]], &atoms[active[j]]));
        let chol = gram.cholesky()?;
        for col in jac.iter_mut() {
            let proj = DVector::from_iterator(active.len(), active.iter().map(|&i| rdot(&atoms[i], col)));
            let coef = chol.solve(&proj);
            for (c, &i) in coef.iter().zip(&active) {
                for (v, a) in col.iter_mut().zip(&atoms[i]) {
                    *v -= a * *c;
                }
            }
        }
    }
    let h = DMatrix::from_fn(k, k, |i, j| rdot(&jac[i], &jac[j]));
    let g = DVector::from_iterator(k, jac.iter().map(|col| rdot(col, &residual)));
    let max_diag = (0..k).map(|i| h[(i, i)]).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    let mut damped = h.clone();
    for i in 0..k {
        damped[(i, i)] += 1e-10 * max_diag + 1e-12 * h[(i, i)];
    }
    let delta = damped.cholesky()?.solve(&g);
    Some(delta.iter().copied().collect())
}

/// Sketched estimate of one pixel.
///
/// Starts from several initializations (backprojection peaks, and greedy peaks
/// of the residual backprojection added one surface at a time), refines each,
/// keeps the lowest loss, then prunes weak surfaces and refits.
pub fn fit_pixel(z: &Sketch, model: &SketchModel, opts: &FitOptions) -> Result<PixelFit> {
    if z.is_empty() {
        return Err(Error::EmptySketch);
    }
    model.check_len(z)?;
    opts.validate(model.scheme())?;
    let best = best_start(z, model, opts, &[]);
    let (cand, iterations) = prune_and_refit(z, model, opts, best)?;
    let params = PixelParams::from_surfaces(cand.surfaces())?;
    Ok(PixelFit { params, loss: cand.loss, iterations })
}

/// Like [`fit_pixel`] but also tries the given starting depths first.
pub(crate) fn fit_pixel_seeded(z: &Sketch, model: &SketchModel, opts: &FitOptions, seeds: &[f64]) -> Result<PixelFit> {
    if z.is_empty() {
        return Err(Error::EmptySketch);
    }
    let best = best_start(z, model, opts, seeds);
    let (cand, iterations) = prune_and_refit(z, model, opts, best)?;
    let params = PixelParams::from_surfaces(cand.surfaces())?;
    Ok(PixelFit { params, loss: cand.loss, iterations })
}

fn best_start(z: &Sketch, model: &SketchModel, opts: &FitOptions, seeds: &[f64]) -> Option<(Candidate, usize)> {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if !seeds.is_empty() {
        starts.push(seeds.to_vec());
    }
    let peaks = pick_peaks(z.values(), model, opts.k_max, opts, &[]);
    if !peaks.is_empty() {
        starts.push(peaks);
    }
    let mut best: Option<(Candidate, usize)> = None;
    let mut consider = |c: Option<(Candidate, usize)>| {
        if let Some((cand, it)) = c {
            match &best {
                Some((b, _)) if b.loss <= cand.loss => {}
                _ => best = Some((cand, it)),
            }
        }
    };
    for s in &starts {
        consider(refine_depths(z, model, s, opts));
    }
    if opts.k_max > 1 {
        consider(greedy_start(z, model, opts));
    }
    best
}

/// Adds surfaces one at a time, refining the whole set after each addition.
/// A new surface is seeded either at the strongest peak of the residual
/// backprojection or by splitting an existing surface in two (close pairs
/// show up as a single backprojection peak).
fn greedy_start(z: &Sketch, model: &SketchModel, opts: &FitOptions) -> Option<(Candidate, usize)> {
    let first = pick_peaks(z.values(), model, 1, opts, &[]);
    let (mut cur, mut iters) = refine_depths(z, model, &first, opts)?;
    while cur.depths.len() < opts.k_max {
        let psi = model.cf(&cur.surfaces());
        let residual: Vec<Complex64> = z.values().iter().zip(&psi).map(|(a, b)| a - b).collect();
        let mut starts = Vec::new();
        let extra = pick_peaks(&residual, model, 1, opts, &cur.depths);
        if let Some(&t) = extra.first() {
            let mut s = cur.depths.clone();
            s.push(t);
            starts.push(s);
        }
        for j in 0..cur.depths.len() {
            for half_gap in [0.75 * opts.min_sep, 1.5 * opts.min_sep] {
                let mut s = cur.depths.clone();
                s[j] -= half_gap;
                s.push(cur.depths[j] + half_gap);
                starts.push(s);
            }
        }
        let mut best: Option<Candidate> = None;
        for start in &starts {
            if let Some((c, it)) = refine_depths(z, model, start, opts) {
                iters += it;
                if best.as_ref().is_none_or(|b| c.loss < b.loss) {
                    best = Some(c);
                }
            }
        }
        match best {
            Some(b) if b.loss < cur.loss => cur = b,
            _ => break,
        }
    }
    Some((cur, iters))
}

fn prune_and_refit(
    z: &Sketch,
    model: &SketchModel,
    opts: &FitOptions,
    start: Option<(Candidate, usize)>,
) -> Result<(Candidate, usize)> {
    let (mut cand, mut iterations) = start.ok_or(Error::NoSurfaceFound)?;
    loop {
        let kept: Vec<f64> = cand
            .depths
            .iter()
            .zip(&cand.alpha)
            .filter(|(_, &a)| a >= opts.prune_threshold)
            .map(|(&d, _)| d)
            .collect();
        if kept.is_empty() {
            return Err(Error::NoSurfaceFound);
        }
        if kept.len() == cand.depths.len() {
            return Ok((cand, iterations));
        }
        let (next, it) =
            refine_depths(z, model, &kept, opts).ok_or(Error::NoSurfaceFound)?;
        iterations += it;
        cand = next;
    }
}

/// Fits every pixel independently. Pixels without photons, or where every
/// surface is pruned, come back with no surfaces.
pub fn fit_frame(frame: &SketchFrame, model: &SketchModel, opts: &FitOptions) -> Result<PointCloudEstimate> {
    opts.validate(model.scheme())?;
    if frame.scheme() != model.scheme() {
        return Err(Error::SchemeMismatch("frame and model use different schemes".into()));
    }
    let pixels = frame
        .sketches()
        .par_iter()
        .map(|z| match fit_pixel(z, model, opts) {
            Ok(fit) => Ok(PixelEstimate::new(fit.params.surfaces().to_vec(), z.count())),
            Err(Error::EmptySketch | Error::NoSurfaceFound) => Ok(PixelEstimate::new(Vec::new(), z.count())),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloudEstimate::new(frame.rows(), frame.cols(), frame.scheme().t_bins(), pixels)
}
