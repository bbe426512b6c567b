//! Observation model for a single lidar pixel.
//!
//! A detected photon's time of arrival follows a mixture of `K` shifted copies
//! of the instrument response plus a uniform background on `{0, …, T-1}`.
//! Sketches are samples of the empirical characteristic function at the
//! frequencies `ω_ℓ = 2πℓ/T`, `ℓ = 1..m`, where the uniform background has a
//! characteristic function that vanishes identically. Everything a solver
//! needs (model CF, sketch loss, analytic gradient) lives here.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Discrete instrument response `h(u)`, `u = 0..L-1`.
///
/// `center` is the offset (in bins) of the nominal peak inside the support, so
/// that a surface at depth `t` produces photons distributed as
/// `h(x - t + center) / H`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentResponse {
    samples: Vec<f64>,
    total: f64,
    center: f64,
}

impl InstrumentResponse {
    pub fn new(samples: Vec<f64>, center: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("impulse response has no samples".into()));
        }
        if samples.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::InvalidParameter(
                "impulse response samples must be finite and nonnegative".into(),
            ));
        }
        if !center.is_finite() {
            return Err(Error::InvalidParameter("impulse response center must be finite".into()));
        }
        let total: f64 = samples.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("impulse response sums to zero".into()));
        }
        Ok(Self { samples, total, center })
    }

    /// Unit impulse: every signal photon lands exactly on the surface depth.
    pub fn delta() -> Self {
        Self { samples: vec![1.0], total: 1.0, center: 0.0 }
    }

    /// Sampled Gaussian with standard deviation `sigma` bins, truncated at
    /// `±ceil(4σ)` and centered in its support.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("gaussian sigma must be positive, got {sigma}")));
        }
        let half = (4.0 * sigma).ceil() as usize;
        let samples = (0..2 * half + 1)
            .map(|u| {
                let d = u as f64 - half as f64;
                (-0.5 * d * d / (sigma * sigma)).exp()
            })
            .collect();
        Self::new(samples, half as f64)
    }

    /// Response measured as raw samples; the peak sample becomes the center.
    pub fn from_samples_peak(samples: Vec<f64>) -> Result<Self> {
        let peak = samples
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (i, &h)| if h > best.1 { (i, h) } else { best })
            .0;
        Self::new(samples, peak as f64)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `H = Σ h(u)`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Standard deviation of the normalized response, in bins.
    pub fn std_width(&self) -> f64 {
        let mean = self.samples.iter().enumerate().map(|(u, h)| u as f64 * h).sum::<f64>() / self.total;
        let var = self
            .samples
            .iter()
            .enumerate()
            .map(|(u, h)| (u as f64 - mean).powi(2) * h)
            .sum::<f64>()
            / self.total;
        var.sqrt()
    }

    /// Default minimum separation between two surfaces in one pixel:
    /// twice the response width, never below one bin.
    pub fn default_min_sep(&self) -> f64 {
        (2.0 * self.std_width()).max(1.0)
    }
}

/// Frequencies `ω_ℓ = 2πℓ/T` for `ℓ = 1..m`, in radians per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrequencyScheme {
    t_bins: u32,
    m: usize,
}

impl FrequencyScheme {
    pub fn new(t_bins: u32, m: usize) -> Result<Self> {
        if t_bins < 2 {
            return Err(Error::InvalidParameter(format!("T must be at least 2, got {t_bins}")));
        }
        if m == 0 || m > (t_bins - 1) as usize {
            return Err(Error::InvalidParameter(format!("sketch size m must lie in [1, {}], got {m}", t_bins - 1)));
        }
        Ok(Self { t_bins, m })
    }

    /// Number of fine time bins `T`.
    pub fn t_bins(&self) -> u32 {
        self.t_bins
    }

    /// Sketch size `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `ω_ℓ` for a one-based index `ℓ`.
    pub fn omega(&self, l: usize) -> f64 {
        2.0 * PI * l as f64 / self.t_bins as f64
    }

    pub fn omegas(&self) -> Vec<f64> {
        (1..=self.m).map(|l| self.omega(l)).collect()
    }

    /// Wraps a real depth into `[0, T)`.
    pub fn wrap_depth(&self, t: f64) -> f64 {
        let t_len = self.t_bins as f64;
        let w = t.rem_euclid(t_len);
        if w >= t_len {
            0.0
        } else {
            w
        }
    }

    /// Shortest distance between two depths on the circle of length `T`.
    pub fn circular_distance(&self, a: f64, b: f64) -> f64 {
        let t_len = self.t_bins as f64;
        let d = (a - b).rem_euclid(t_len);
        d.min(t_len - d)
    }
}

/// One reflecting surface: depth in bins and probability mass of its photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub depth: f64,
    pub intensity: f64,
}

impl Surface {
    pub fn new(depth: f64, intensity: f64) -> Self {
        Self { depth, intensity }
    }
}

/// Mixture parameters of one pixel: surfaces sorted by depth plus the
/// background weight `α_0 = 1 - Σ α_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelParams {
    surfaces: Vec<Surface>,
    background: f64,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl PixelParams {
    pub fn new(mut surfaces: Vec<Surface>, background: f64) -> Result<Self> {
        if surfaces.iter().any(|s| !s.depth.is_finite() || !s.intensity.is_finite() || s.intensity < 0.0) {
            return Err(Error::InvalidParameter("surface depths and intensities must be finite, intensities nonnegative".into()));
        }
        if !(background.is_finite() && background >= 0.0) {
            return Err(Error::InvalidParameter(format!("background weight must be nonnegative, got {background}")));
        }
        let total = background + surfaces.iter().map(|s| s.intensity).sum::<f64>();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, expected 1")));
        }
        sort_by_depth(&mut surfaces);
        Ok(Self { surfaces, background })
    }

    /// Builds parameters from signal surfaces only; the background weight is
    /// the remaining mass.
    pub fn from_surfaces(surfaces: Vec<Surface>) -> Result<Self> {
        let signal: f64 = surfaces.iter().map(|s| s.intensity).sum();
        if signal > 1.0 + SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("surface intensities sum to {signal} > 1")));
        }
        Self::new(surfaces, (1.0 - signal).max(0.0))
    }

    /// Pure background, no surfaces.
    pub fn background_only() -> Self {
        Self { surfaces: Vec::new(), background: 1.0 }
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn k(&self) -> usize {
        self.surfaces.len()
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn depths(&self) -> Vec<f64> {
        self.surfaces.iter().map(|s| s.depth).collect()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.surfaces.iter().map(|s| s.intensity).collect()
    }

    /// Checks the depth range `[0, T)` and the pairwise separation.
    pub fn check_layout(&self, t_bins: u32, min_sep: f64) -> Result<()> {
        for s in &self.surfaces {
            if s.depth < 0.0 || s.depth >= t_bins as f64 {
                return Err(Error::InvalidParameter(format!("depth {} outside [0, {t_bins})", s.depth)));
            }
        }
        for pair in self.surfaces.windows(2) {
            if pair[1].depth - pair[0].depth < min_sep {
                return Err(Error::InvalidParameter(format!(
                    "depths {} and {} closer than {min_sep}",
                    pair[0].depth, pair[1].depth
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn sort_by_depth(surfaces: &mut [Surface]) {
    surfaces.sort_by(|a, b| a.depth.total_cmp(&b.depth));
}

/// Empirical characteristic function of one pixel's photons at the scheme's
/// frequencies, with the number of photons it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub(crate) values: Vec<Complex64>,
    pub(crate) count: u64,
}

impl Sketch {
    /// A sketch that has seen no photons.
    pub fn empty(m: usize) -> Self {
        Self { values: vec![Complex64::new(0.0, 0.0); m], count: 0 }
    }

    /// Wraps raw values. An empty count forces all values to zero.
    pub fn from_parts(values: Vec<Complex64>, count: u64) -> Result<Self> {
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("sketch values must be finite".into()));
        }
        if count == 0 && values.iter().any(|z| *z != Complex64::new(0.0, 0.0)) {
            return Err(Error::InvalidParameter("empty sketch must have zero values".into()));
        }
        if count > 0 && values.iter().any(|z| z.norm() > 1.0 + 1e-9) {
            return Err(Error::InvalidParameter("sketch values must have modulus at most 1".into()));
        }
        Ok(Self { values, count })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Characteristic function of the discrete uniform law on `{0, …, T-1}`.
///
/// Evaluated through the closed form of the geometric sum,
/// `e^{iω(T-1)/2} · sin(ωT/2) / (T sin(ω/2))`, which is zero at every
/// nonzero multiple of `2π/T` below `2π`. The continuous-time counterpart
/// would be `e^{iωT/2} sinc(ωT/2)` with the unnormalized `sinc(x) = sin x / x`.
pub fn background_cf(omega: f64, t_bins: u32) -> Complex64 {
    let t_len = t_bins.max(1) as f64;
    // The sum only depends on ω modulo 2π.
    let w = omega - 2.0 * PI * (omega / (2.0 * PI)).round();
    let half = (0.5 * w).sin();
    if half == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let ratio = (0.5 * w * t_len).sin() / (t_len * half);
    Complex64::cis(0.5 * w * (t_len - 1.0)) * ratio
}

/// Normalized Fourier samples `ĥ(ω_ℓ)/H` of the response, referenced to its
/// center so that depth denotes the peak position.
pub fn irf_fourier(irf: &InstrumentResponse, scheme: &FrequencyScheme) -> Result<Vec<Complex64>> {
    if irf.total() <= 0.0 {
        return Err(Error::InvalidParameter("impulse response sums to zero".into()));
    }
    if irf.len() > scheme.t_bins() as usize {
        return Err(Error::InvalidParameter(format!(
            "impulse response length {} exceeds T = {}",
            irf.len(),
            scheme.t_bins()
        )));
    }
    Ok(scheme
        .omegas()
        .into_iter()
        .map(|w| {
            irf.samples()
                .iter()
                .enumerate()
                .filter(|(_, h)| **h != 0.0)
                .map(|(u, h)| Complex64::cis(w * (u as f64 - irf.center())) * *h)
                .sum::<Complex64>()
                / irf.total()
        })
        .collect())
}

/// Model characteristic function `Ψ_θ(ω_ℓ)` at the scheme's frequencies.
pub fn model_cf(theta: &PixelParams, scheme: &FrequencyScheme, irf: &InstrumentResponse) -> Result<Vec<Complex64>> {
    Ok(SketchModel::new(scheme, irf)?.cf(theta.surfaces()))
}

/// `n Σ_ℓ |z_ℓ - Ψ_θ(ω_ℓ)|²`.
pub fn sketch_loss(z: &Sketch, theta: &PixelParams, scheme: &FrequencyScheme, irf: &InstrumentResponse) -> Result<f64> {
    SketchModel::new(scheme, irf)?.loss(z, theta.surfaces())
}

/// Analytic gradient of [`sketch_loss`] with respect to every depth and
/// intensity (`α_0` eliminated).
pub fn sketch_loss_gradient(
    z: &Sketch,
    theta: &PixelParams,
    scheme: &FrequencyScheme,
    irf: &InstrumentResponse,
) -> Result<LossGradient> {
    SketchModel::new(scheme, irf)?.gradient(z, theta.surfaces())
}

/// Partial derivatives of the sketch loss, one entry per surface.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub depth: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl LossGradient {
    pub fn norm(&self) -> f64 {
        self.depth.iter().chain(&self.intensity).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Frequency scheme bundled with the response spectrum; the hot-path entry
/// point used by the solvers.
#[derive(Debug, Clone)]
pub struct SketchModel {
    scheme: FrequencyScheme,
    omegas: Vec<f64>,
    spectrum: Vec<Complex64>,
}

impl SketchModel {
    pub fn new(scheme: &FrequencyScheme, irf: &InstrumentResponse) -> Result<Self> {
        Ok(Self { scheme: *scheme, omegas: scheme.omegas(), spectrum: irf_fourier(irf, scheme)? })
    }

    pub fn scheme(&self) -> &FrequencyScheme {
        &self.scheme
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    /// `ĥ(ω_ℓ)/H`.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn m(&self) -> usize {
        self.omegas.len()
    }

    /// Column of the linear model for a surface at depth `t`:
    /// `(ĥ(ω_ℓ)/H) e^{iω_ℓ t}`.
    pub fn atom(&self, t: f64) -> Vec<Complex64> {
        self.omegas.iter().zip(&self.spectrum).map(|(w, a)| a * Complex64::cis(w * t)).collect()
    }

    /// Model CF of the signal surfaces. The background term is not added:
    /// it is identically zero at these frequencies.
    pub fn cf(&self, surfaces: &[Surface]) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); self.m()];
        for s in surfaces {
            for ((p, w), a) in psi.iter_mut().zip(&self.omegas).zip(&self.spectrum) {
                *p += a * Complex64::cis(w * s.depth) * s.intensity;
            }
        }
        psi
    }

    /// `z - Ψ_θ`.
    pub fn residual(&self, z: &Sketch, surfaces: &[Surface]) -> Vec<Complex64> {
        z.values.iter().zip(self.cf(surfaces)).map(|(zl, p)| zl - p).collect()
    }

    pub fn loss(&self, z: &Sketch, surfaces: &[Surface]) -> Result<f64> {
        if z.is_empty() {
            return Err(Error::EmptySketch);
        }
        self.check_len(z)?;
        Ok(self.weighted_loss(z, surfaces))
    }

    /// Loss without the emptiness check; zero for empty sketches.
    pub(crate) fn weighted_loss(&self, z: &Sketch, surfaces: &[Surface]) -> f64 {
        z.count as f64 * self.residual(z, surfaces).iter().map(|r| r.norm_sqr()).sum::<f64>()
    }

    pub fn gradient(&self, z: &Sketch, surfaces: &[Surface]) -> Result<LossGradient> {
        if z.is_empty() {
            return Err(Error::EmptySketch);
        }
        self.check_len(z)?;
        Ok(self.weighted_gradient(z, surfaces))
    }

    pub(crate) fn weighted_gradient(&self, z: &Sketch, surfaces: &[Surface]) -> LossGradient {
        let n = z.count as f64;
        let r = self.residual(z, surfaces);
        let mut depth = Vec::with_capacity(surfaces.len());
        let mut intensity = Vec::with_capacity(surfaces.len());
        for s in surfaces {
            // dΨ/dα = atom, dΨ/dt = iω α atom; dL/dx = -2n Σ Re(conj(r) dΨ/dx)
            let mut g_t = 0.0;
            let mut g_a = 0.0;
            for ((rl, w), a) in r.iter().zip(&self.omegas).zip(&self.spectrum) {
                let atom = a * Complex64::cis(w * s.depth);
                let c = (rl.conj() * atom).im;
                g_a += (rl.conj() * atom).re;
                g_t -= w * c;
            }
            depth.push(-2.0 * n * s.intensity * g_t);
            intensity.push(-2.0 * n * g_a);
        }
        LossGradient { depth, intensity }
    }

    pub(crate) fn check_len(&self, z: &Sketch) -> Result<()> {
        if z.m() != self.m() {
            return Err(Error::SchemeMismatch(format!("sketch has {} entries, scheme has {}", z.m(), self.m())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn brute_uniform_cf(w: f64, t: u32) -> Complex64 {
        (0..t).map(|x| Complex64::cis(w * x as f64)).sum::<Complex64>() / t as f64
    }

    #[test]
    fn background_cf_vanishes_on_scheme() {
        assert!(close(background_cf(2.0 * PI * 3.0 / 100.0, 100), Complex64::new(0.0, 0.0), 1e-14));
        for t in [2u32, 7, 153, 4613] {
            let scheme = FrequencyScheme::new(t, (t - 1).min(64) as usize).unwrap();
            for w in scheme.omegas() {
                assert!(background_cf(w, t).norm() <= 1e-12, "T={t} w={w}");
            }
        }
    }

    #[test]
    fn background_cf_at_zero_and_against_direct_sum() {
        for t in [1u32, 5, 4613] {
            assert_eq!(background_cf(0.0, t), Complex64::new(1.0, 0.0));
        }
        assert!(close(background_cf(0.013, 4613), brute_uniform_cf(0.013, 4613), 1e-12));
        assert!(close(background_cf(7.5, 31), brute_uniform_cf(7.5, 31), 1e-12));
        assert!(close(background_cf(-2.2, 64), brute_uniform_cf(-2.2, 64), 1e-12));
    }

    #[test]
    fn irf_fourier_small_cases() {
        let scheme = FrequencyScheme::new(4, 3).unwrap();
        let ones = irf_fourier(&InstrumentResponse::delta(), &scheme).unwrap();
        assert!(ones.iter().all(|v| close(*v, Complex64::new(1.0, 0.0), 1e-15)));

        let two = InstrumentResponse::new(vec![1.0, 1.0], 0.0).unwrap();
        let f = irf_fourier(&two, &scheme).unwrap();
        assert!(close(f[0], Complex64::new(0.5, 0.5), 1e-15));
    }

    #[test]
    fn irf_fourier_gaussian_matches_direct_dft() {
        let irf = InstrumentResponse::gaussian(10.0).unwrap();
        assert_eq!(irf.len(), 81);
        let scheme = FrequencyScheme::new(4613, 10).unwrap();
        let got = irf_fourier(&irf, &scheme).unwrap();
        for (l, g) in got.iter().enumerate() {
            let w = 2.0 * PI * (l + 1) as f64 / 4613.0;
            let mut acc = Complex64::new(0.0, 0.0);
            let mut h_sum = 0.0;
            for u in 0..81 {
                let d = u as f64 - 40.0;
                let h = (-0.5 * d * d / 100.0).exp();
                h_sum += h;
                acc += Complex64::new((w * d).cos(), (w * d).sin()) * h;
            }
            assert!(close(*g, acc / h_sum, 1e-12));
        }
    }

    #[test]
    fn irf_rejects_zero_and_too_long() {
        assert!(InstrumentResponse::new(vec![0.0, 0.0], 0.0).is_err());
        assert!(InstrumentResponse::new(vec![1.0, -0.1], 0.0).is_err());
        let scheme = FrequencyScheme::new(10, 3).unwrap();
        let long = InstrumentResponse::new(vec![1.0; 11], 5.0).unwrap();
        assert!(irf_fourier(&long, &scheme).is_err());
    }

    #[test]
    fn scheme_bounds() {
        assert!(FrequencyScheme::new(100, 0).is_err());
        assert!(FrequencyScheme::new(100, 100).is_err());
        let s = FrequencyScheme::new(100, 99).unwrap();
        let w = s.omegas();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!(w.iter().all(|&x| x > 0.0 && x < 2.0 * PI));
    }

    #[test]
    fn model_cf_simple_cases() {
        let scheme = FrequencyScheme::new(100, 4).unwrap();
        let delta = InstrumentResponse::delta();
        let theta = PixelParams::from_surfaces(vec![Surface::new(25.0, 1.0)]).unwrap();
        let psi = model_cf(&theta, &scheme, &delta).unwrap();
        assert!(close(psi[0], Complex64::new(0.0, 1.0), 1e-14));

        let bg = PixelParams::background_only();
        let psi = model_cf(&bg, &scheme, &delta).unwrap();
        assert!(psi.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn model_cf_matches_full_distribution_sum() {
        let t_bins = 153u32;
        let scheme = FrequencyScheme::new(t_bins, 10).unwrap();
        let irf = InstrumentResponse::gaussian(2.0).unwrap();
        let theta = PixelParams::new(vec![Surface::new(30.0, 0.4), Surface::new(60.0, 0.3)], 0.3).unwrap();
        let psi = model_cf(&theta, &scheme, &irf).unwrap();

        // pi(x) = Σ α_k h(x - t_k + c)/H + α_0/T on the T-bin circle
        let h = irf.samples();
        let c = irf.center() as i64;
        let mut pmf = vec![theta.background() / t_bins as f64; t_bins as usize];
        for s in theta.surfaces() {
            for (u, hu) in h.iter().enumerate() {
                let x = (s.depth as i64 + u as i64 - c).rem_euclid(t_bins as i64) as usize;
                pmf[x] += s.intensity * hu / irf.total();
            }
        }
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (l, p) in psi.iter().enumerate() {
            let w = 2.0 * PI * (l + 1) as f64 / t_bins as f64;
            let direct: Complex64 = pmf.iter().enumerate().map(|(x, px)| Complex64::cis(w * x as f64) * px).sum();
            assert!(close(*p, direct, 1e-10), "l={l}: {p} vs {direct}");
        }
    }

    #[test]
    fn loss_examples() {
        let scheme = FrequencyScheme::new(100, 6).unwrap();
        let delta = InstrumentResponse::delta();
        let theta = PixelParams::from_surfaces(vec![Surface::new(12.5, 1.0)]).unwrap();
        let z = Sketch::from_parts(vec![Complex64::new(0.0, 0.0); 6], 10).unwrap();
        let l = sketch_loss(&z, &theta, &scheme, &delta).unwrap();
        assert!((l - 60.0).abs() < 1e-12);

        let exact = Sketch::from_parts(model_cf(&theta, &scheme, &delta).unwrap(), 10).unwrap();
        assert_eq!(sketch_loss(&exact, &theta, &scheme, &delta).unwrap(), 0.0);

        let empty = Sketch::empty(6);
        assert!(matches!(sketch_loss(&empty, &theta, &scheme, &delta), Err(Error::EmptySketch)));
        assert!(matches!(sketch_loss_gradient(&empty, &theta, &scheme, &delta), Err(Error::EmptySketch)));
    }

    #[test]
    fn gradient_vanishes_at_noiseless_optimum() {
        let scheme = FrequencyScheme::new(153, 10).unwrap();
        let irf = InstrumentResponse::gaussian(2.0).unwrap();
        let theta = PixelParams::new(vec![Surface::new(30.0, 0.4), Surface::new(60.0, 0.3)], 0.3).unwrap();
        let z = Sketch::from_parts(model_cf(&theta, &scheme, &irf).unwrap(), 500).unwrap();
        let g = sketch_loss_gradient(&z, &theta, &scheme, &irf).unwrap();
        assert!(g.norm() <= 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(PixelParams::new(vec![Surface::new(1.0, 0.5)], 0.4).is_err());
        assert!(PixelParams::from_surfaces(vec![Surface::new(1.0, 0.7), Surface::new(9.0, 0.7)]).is_err());
        let p = PixelParams::from_surfaces(vec![Surface::new(9.0, 0.2), Surface::new(1.0, 0.3)]).unwrap();
        assert_eq!(p.depths(), vec![1.0, 9.0]);
        assert!((p.background() - 0.5).abs() < 1e-15);
        assert!(p.check_layout(10, 4.0).is_ok());
        assert!(p.check_layout(10, 9.0).is_err());
        assert!(p.check_layout(5, 1.0).is_err());
    }

    #[test]
    fn gaussian_width_and_min_sep() {
        let g = InstrumentResponse::gaussian(2.0).unwrap();
        assert!((g.std_width() - 2.0).abs() < 1e-3);
        assert!((g.default_min_sep() - 4.0).abs() < 1e-2);
        assert_eq!(InstrumentResponse::delta().default_min_sep(), 1.0);
    }
}
