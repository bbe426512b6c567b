//! Cross-correlation baseline and detection metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cloud::{PixelEstimate, PointCloudEstimate};
use crate::stream::PhotonFrame;
use crate::error::{Error, Result};
use crate::model::{InstrumentResponse, Surface};

/// Depth and peak score of the cross-correlation estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XcorrPeak {
    pub depth: f64,
    pub score: f64,
}

/// Circular cross-correlation of a fine histogram with the response,
/// `C(t) = Σ_u h[u] y[(t + u − c) mod T]` where `c` is the response center,
/// so `t` is the depth convention used everywhere else. Returns the maximizing
/// integer `t`, smallest on ties.
///
/// Only non-empty bins are visited; each `C(t)` still accumulates its terms in
/// increasing `u`, so the result matches the dense double loop bit for bit.
pub fn xcorr_depth(y: &[u64], irf: &InstrumentResponse) -> Result<XcorrPeak> {
    let t_len = y.len();
    if y.iter().all(|&v| v == 0) {
        return Err(Error::EmptyHistogram);
    }
    if irf.len() > t_len {
        return Err(Error::InvalidParameter(format!("response length {} exceeds {t_len} bins", irf.len())));
    }
    let c = irf.center().round() as usize;
    let nonzero: Vec<(usize, f64)> = y.iter().enumerate().filter(|(_, &v)| v > 0).map(|(x, &v)| (x, v as f64)).collect();
    let mut corr = vec![0.0f64; t_len];
    for (u, &h) in irf.samples().iter().enumerate() {
        for &(x, v) in &nonzero {
            let t = (x + t_len + c - u) % t_len;
            corr[t] += h * v;
        }
    }
    let mut best = 0;
    for t in 1..t_len {
        if corr[t] > corr[best] {
            best = t;
        }
    }
    Ok(XcorrPeak { depth: best as f64, score: corr[best] })
}

/// XCORR reconstruction of a photon frame: one surface per non-empty pixel at
/// the correlation peak. Its intensity is the photon fraction inside the
/// response footprint in excess of the uniform share, rescaled to `[0, 1]`.
pub fn xcorr_frame(frame: &PhotonFrame, irf: &InstrumentResponse) -> Result<PointCloudEstimate> {
    let t_len = frame.t_bins() as usize;
    let c = irf.center().round() as usize;
    let share = irf.len() as f64 / t_len as f64;
    let pixels = frame
        .pixels()
        .par_iter()
        .map(|xs| {
            if xs.is_empty() {
                return Ok(PixelEstimate::default());
            }
            let mut y = vec![0u64; t_len];
            for &x in xs {
                y[x as usize] += 1;
            }
            let peak = xcorr_depth(&y, irf)?;
            let t = peak.depth as usize;
            let inside: u64 = (0..irf.len()).map(|u| y[(t + t_len + u - c) % t_len]).sum();
            let frac = inside as f64 / xs.len() as f64;
            let alpha = if share < 1.0 { ((frac - share) / (1.0 - share)).clamp(0.0, 1.0) } else { 1.0 };
            Ok(PixelEstimate::new(vec![Surface::new(peak.depth, alpha)], xs.len() as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloudEstimate::new(frame.rows(), frame.cols(), frame.t_bins(), pixels)
}

/// Matching of one pixel's estimated surfaces against its ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelMatch {
    /// `(estimate index, truth index)` pairs within the tolerance.
    pub pairs: Vec<(usize, usize)>,
    pub false_detections: Vec<usize>,
    pub misses: Vec<usize>,
}

/// Greedy one-to-one matching by increasing depth gap; pairs further apart
/// than `tau` are left unmatched. Ties go to the lower indices.
pub fn detection_match(est: &[Surface], gt: &[Surface], tau: f64) -> PixelMatch {
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(est.len() * gt.len());
    for (i, e) in est.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let d = (e.depth - g.depth).abs();
            if d <= tau {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    PixelMatch {
        pairs,
        false_detections: (0..est.len()).filter(|&i| !used_e[i]).collect(),
        misses: (0..gt.len()).filter(|&j| !used_g[j]).collect(),
    }
}

/// One true detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRow {
    pub row: usize,
    pub col: usize,
    pub est: Surface,
    pub gt: Surface,
}

/// Detection rates and errors of an estimate against ground truth.
///
/// DAE is the mean `|t̂ − t|` over true detections. IAE is the mean
/// `|α̂ − α|` over true detections divided by the mean ground-truth intensity
/// of the matched surfaces. Both are NaN when nothing was detected.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tau: f64,
    pub gt_surfaces: usize,
    pub est_surfaces: usize,
    pub true_detections: usize,
    pub false_detections: usize,
    pub misses: usize,
    pub true_rate: f64,
    pub false_rate: f64,
    pub dae: f64,
    pub iae: f64,
    pub matches: Vec<MatchRow>,
}

impl EvalReport {
    /// `key=value` lines preceded by a comment stating the conventions.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        s.push_str("# true_rate = true detections / ground-truth surfaces; false_rate = false detections / estimated surfaces\n");
        s.push_str("# dae = mean |depth error| over true detections (bins)\n");
        s.push_str("# iae = mean |intensity error| over true detections / mean ground-truth intensity of matched surfaces\n");
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "gt_surfaces={}", self.gt_surfaces);
        let _ = writeln!(s, "est_surfaces={}", self.est_surfaces);
        let _ = writeln!(s, "true_detections={}", self.true_detections);
        let _ = writeln!(s, "false_detections={}", self.false_detections);
        let _ = writeln!(s, "misses={}", self.misses);
        let _ = writeln!(s, "true_rate={}", self.true_rate);
        let _ = writeln!(s, "false_rate={}", self.false_rate);
        let _ = writeln!(s, "dae={}", self.dae);
        let _ = writeln!(s, "iae={}", self.iae);
        s
    }

    /// Per-match table with a header row.
    pub fn matches_csv(&self) -> String {
        let mut s = String::from("row,col,est_depth,gt_depth,est_intensity,gt_intensity\n");
        for m in &self.matches {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.row, m.col, m.est.depth, m.gt.depth, m.est.intensity, m.gt.intensity);
        }
        s
    }
}

/// Scores `est` against per-pixel ground-truth surfaces (row-major).
pub fn evaluate(est: &PointCloudEstimate, gt: &[Vec<Surface>], tau: f64) -> Result<EvalReport> {
    if gt.len() != est.rows() * est.cols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} pixels, ground truth {}",
            est.rows() * est.cols(),
            gt.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tau} must be positive")));
    }
    let gt_surfaces: usize = gt.iter().map(Vec::len).sum();
    if gt_surfaces == 0 {
        return Err(Error::NoGroundTruth);
    }
    let cols = est.cols();
    let per_pixel: Vec<(PixelMatch, Vec<MatchRow>)> = est
        .pixels()
        .par_iter()
        .zip(gt.par_iter())
        .enumerate()
        .map(|(idx, (p, g))| {
            let pm = detection_match(&p.surfaces, g, tau);
            let rows = pm
                .pairs
                .iter()
                .map(|&(i, j)| MatchRow { row: idx / cols, col: idx % cols, est: p.surfaces[i], gt: g[j] })
                .collect();
            (pm, rows)
        })
        .collect();
    let mut matches = Vec::new();
    let (mut fd, mut miss) = (0, 0);
    for (pm, rows) in per_pixel {
        fd += pm.false_detections.len();
        miss += pm.misses.len();
        matches.extend(rows);
    }
    let td = matches.len();
    let est_surfaces = est.total_surfaces();
    let (dae, iae) = if td == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let n = td as f64;
        let dae = matches.iter().map(|m| (m.est.depth - m.gt.depth).abs()).sum::<f64>() / n;
        let mean_gt = matches.iter().map(|m| m.gt.intensity).sum::<f64>() / n;
        let abs_err = matches.iter().map(|m| (m.est.intensity - m.gt.intensity).abs()).sum::<f64>() / n;
        (dae, if mean_gt > 0.0 { abs_err / mean_gt } else { f64::NAN })
    };
    Ok(EvalReport {
        tau,
        gt_surfaces,
        est_surfaces,
        true_detections: td,
        false_detections: fd,
        misses: miss,
        true_rate: td as f64 / gt_surfaces as f64,
        false_rate: if est_surfaces == 0 { 0.0 } else { fd as f64 / est_surfaces as f64 },
        dae,
        iae,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PixelEstimate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(d: f64) -> Surface {
        Surface::new(d, 0.3)
    }

    /// Dense `O(T·L)` correlation with the same summation order.
    fn naive_xcorr(y: &[u64], irf: &InstrumentResponse) -> (usize, f64) {
        let t_len = y.len();
        let c = irf.center().round() as usize;
        let mut best = (0, f64::NEG_INFINITY);
        for t in 0..t_len {
            let mut acc = 0.0;
            for (u, &h) in irf.samples().iter().enumerate() {
                let v = y[(t + u + t_len - c) % t_len];
                if v > 0 {
                    acc += h * v as f64;
                }
            }
            if acc > best.1 {
                best = (t, acc);
            }
        }
        best
    }

    #[test]
    fn xcorr_shifted_copy() {
        let irf = InstrumentResponse::gaussian(10.0).unwrap();
        let mut y = vec![0u64; 4613];
        for (u, &h) in irf.samples().iter().enumerate() {
            y[700 + u - 40] = (h * 1e6).round() as u64;
        }
        assert_eq!(xcorr_depth(&y, &irf).unwrap().depth, 700.0);
        let delta = InstrumentResponse::delta();
        let mut y = vec![0u64; 100];
        y[37] = 3;
        assert_eq!(xcorr_depth(&y, &delta).unwrap(), XcorrPeak { depth: 37.0, score: 3.0 });
    }

    #[test]
    fn xcorr_frame_locates_surfaces() {
        use crate::sim::{simulate_frame, AcquisitionConfig, SceneReference};
        let irf = InstrumentResponse::gaussian(2.0).unwrap();
        let scene = SceneReference::plane(4, 4, 153, 70.0).unwrap();
        let cfg = AcquisitionConfig::new(200.0, f64::INFINITY, irf.clone(), 1).unwrap();
        let mut frame = simulate_frame(&scene, &cfg).unwrap().into_pixels();
        frame[5].clear();
        let est = xcorr_frame(&PhotonFrame::new(4, 4, 153, frame).unwrap(), &irf).unwrap();
        for (i, p) in est.pixels().iter().enumerate() {
            if i == 5 {
                assert!(p.surfaces.is_empty());
                continue;
            }
            let s = p.surfaces[0];
            assert!((s.depth - 70.0).abs() <= 1.0, "{s:?}");
            assert!(s.intensity > 0.95);
        }
    }

    #[test]
    fn xcorr_uniform_ties_to_zero() {
        let irf = InstrumentResponse::gaussian(3.0).unwrap();
        assert_eq!(xcorr_depth(&[5u64; 200], &irf).unwrap().depth, 0.0);
        assert!(matches!(xcorr_depth(&[0u64; 200], &irf), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn xcorr_matches_dense_oracle_on_noisy_data() {
        use crate::sim::{histogram, sample_pixel_photons, PhotonSampler};
        let irf = InstrumentResponse::gaussian(10.0).unwrap();
        let sampler = PhotonSampler::new(&irf, 4613).unwrap();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = [Surface::new(1000.0 + 500.0 * seed as f64, 1.0)];
            let xs = sample_pixel_photons(&truth, 100.0, 10.0, &sampler, &mut rng);
            let y = histogram(&xs, 4613, 1, 4613).unwrap();
            let fast = xcorr_depth(&y, &irf).unwrap();
            let (t, score) = naive_xcorr(&y, &irf);
            assert_eq!(fast.depth, t as f64);
            assert_eq!(fast.score.to_bits(), score.to_bits());
        }
    }

    #[test]
    fn matching_examples() {
        let m = detection_match(&[s(102.0)], &[s(100.0)], 4.0);
        assert_eq!(m.pairs, vec![(0, 0)]);
        let m = detection_match(&[s(110.0)], &[s(100.0)], 4.0);
        assert!(m.pairs.is_empty());
        assert_eq!((m.false_detections.len(), m.misses.len()), (1, 1));
    }

    /// Exhaustive assignment maximizing the number of pairs within `tau`, then
    /// minimizing their total gap.
    fn brute_force(est: &[Surface], gt: &[Surface], tau: f64) -> Vec<(usize, usize)> {
        let mut best: (usize, f64, Vec<(usize, usize)>) = (0, f64::INFINITY, Vec::new());
        let perms: Vec<Vec<usize>> = match gt.len() {
            2 => vec![vec![0, 1], vec![1, 0]],
            _ => vec![vec![0]],
        };
        for p in perms {
            let mut pairs = Vec::new();
            let mut cost = 0.0;
            for (i, &j) in p.iter().enumerate().take(est.len()) {
                let d = (est[i].depth - gt[j].depth).abs();
                if d <= tau {
                    pairs.push((i, j));
                    cost += d;
                }
            }
            if pairs.len() > best.0 || (pairs.len() == best.0 && cost < best.1) {
                best = (pairs.len(), cost, pairs);
            }
        }
        best.2.sort_unstable();
        best.2
    }

    #[test]
    fn greedy_agrees_with_exhaustive_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tau = 4.0;
        let trials = 10_000;
        let mut agree = 0;
        for _ in 0..trials {
            let a = rng.random_range(0.0..100.0);
            let b = a + rng.random_range(2.0 * tau..30.0);
            let gt = [s(a), s(b)];
            // estimates may cross over the truth
            let est = [s(a + rng.random_range(-6.0..6.0)), s(b + rng.random_range(-6.0..6.0))];
            if detection_match(&est, &gt, tau).pairs == brute_force(&est, &gt, tau) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.99 * trials as f64, "{agree}");
    }

    fn cloud(px: Vec<Vec<Surface>>, cols: usize) -> PointCloudEstimate {
        let rows = px.len() / cols;
        PointCloudEstimate::new(rows, cols, 4613, px.into_iter().map(|s| PixelEstimate::new(s, 10)).collect()).unwrap()
    }

    #[test]
    fn evaluate_identity_and_shift() {
        let gt: Vec<Vec<Surface>> = (0..6).map(|i| vec![Surface::new(100.0 + i as f64, 0.2 + 0.1 * i as f64)]).collect();
        let r = evaluate(&cloud(gt.clone(), 3), &gt, 4.0).unwrap();
        assert_eq!((r.true_rate, r.false_rate, r.dae, r.iae), (1.0, 0.0, 0.0, 0.0));
        let shifted: Vec<Vec<Surface>> =
            gt.iter().map(|p| p.iter().map(|s| Surface::new(s.depth + 2.0, s.intensity)).collect()).collect();
        let r = evaluate(&cloud(shifted, 3), &gt, 4.0).unwrap();
        assert_eq!(r.true_rate, 1.0);
        assert!((r.dae - 2.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_errors() {
        let gt = vec![Vec::new(); 4];
        assert!(matches!(evaluate(&cloud(gt.clone(), 2), &gt, 4.0), Err(Error::NoGroundTruth)));
        assert!(matches!(evaluate(&cloud(gt, 2), &[vec![s(1.0)]], 4.0), Err(Error::DimensionMismatch(_))));
    }

    /// Independently written scorer: loops over gap-sorted pairs of the
    /// whole frame instead of per pixel.
    fn second_scorer(est: &[Vec<Surface>], gt: &[Vec<Surface>], tau: f64) -> (usize, usize, f64, f64) {
        let mut td = 0;
        let mut dsum = 0.0;
        let mut isum = 0.0;
        let mut gsum = 0.0;
        for (e, g) in est.iter().zip(gt) {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (i, a) in e.iter().enumerate() {
                for (j, b) in g.iter().enumerate() {
                    pairs.push(((a.depth - b.depth).abs(), i, j));
                }
            }
            pairs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut ue = std::collections::HashSet::new();
            let mut ug = std::collections::HashSet::new();
            for (d, i, j) in pairs {
                if d <= tau && !ue.contains(&i) && !ug.contains(&j) {
                    ue.insert(i);
                    ug.insert(j);
                    td += 1;
                    dsum += d;
                    isum += (e[i].intensity - g[j].intensity).abs();
                    gsum += g[j].intensity;
                }
            }
        }
        let est_total: usize = est.iter().map(Vec::len).sum();
        (td, est_total - td, dsum / td as f64, isum / gsum)
    }

    #[test]
    fn evaluate_matches_second_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let gt: Vec<Vec<Surface>> = (0..20)
                .map(|_| {
                    let k = rng.random_range(0..3usize);
                    (0..k).map(|q| Surface::new(100.0 + 50.0 * q as f64 + rng.random_range(0.0..5.0), rng.random_range(0.05..0.4))).collect()
                })
                .collect();
            let est: Vec<Vec<Surface>> = gt
                .iter()
                .map(|g| {
                    let mut e = Vec::new();
                    for x in g {
                        if rng.random_bool(0.8) {
                            let d = x.depth + rng.random_range(-8.0..8.0);
                            e.push(Surface::new(d, (x.intensity + rng.random_range(-0.05..0.05)).max(0.0)));
                        }
                    }
                    if rng.random_bool(0.2) {
                        e.push(Surface::new(rng.random_range(300.0..400.0), 0.1));
                    }
                    e
                })
                .collect();
            if gt.iter().all(Vec::is_empty) {
                continue;
            }
            let est_cloud = cloud(est.clone(), 5);
            let sorted: Vec<Vec<Surface>> = est_cloud.pixels().iter().map(|p| p.surfaces.clone()).collect();
            let r = evaluate(&est_cloud, &gt, 4.0).unwrap();
            let (td, fd, dae, iae) = second_scorer(&sorted, &gt, 4.0);
            assert_eq!((r.true_detections, r.false_detections), (td, fd));
            if td > 0 {
                assert!((r.dae - dae).abs() < 1e-12 && (r.iae - iae).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_serialization() {
        let gt = vec![vec![Surface::new(10.0, 0.5)]];
        let r = evaluate(&cloud(gt.clone(), 1), &gt, 2.0).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("true_rate=1\n") && kv.contains("dae=0\n"));
        assert_eq!(r.matches_csv(), "row,col,est_depth,gt_depth,est_intensity,gt_intensity\n0,0,10,10,0.5,0.5\n");
    }
}
