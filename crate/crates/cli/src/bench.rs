use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::Result;
use sketchlidar::{simulate_frame, AcquisitionConfig, FitOptions, PhotonFrame, SceneReference, SketchFrame, SketchModel};

use crate::commands::{scheme, srt3d_options};
use crate::{BenchArgs, DenoiserArg, Sweep, Usage};

const PHOTON_SWEEP: [f64; 5] = [10.0, 50.0, 100.0, 500.0, 1000.0];

/// One timed phase of one configuration and repetition.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub rows: usize,
    pub cols: usize,
    pub t_bins: u32,
    pub m: u16,
    pub photons: f64,
    pub sbr: f64,
    pub phase: &'static str,
    pub rep: u32,
    pub wall_ms: f64,
    pub peak_rss_bytes: u64,
    pub seed: u64,
}

const HEADER: &str = "rows,cols,t_bins,m,photons,sbr,phase,rep,wall_ms,peak_rss_bytes,seed";

impl BenchRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{},{}",
            self.rows,
            self.cols,
            self.t_bins,
            self.m,
            self.photons,
            self.sbr,
            self.phase,
            self.rep,
            self.wall_ms,
            self.peak_rss_bytes,
            self.seed
        )
    }
}

/// Process high-water resident set size; 0 where `/proc` is unavailable.
fn peak_rss_bytes() -> u64 {
    fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find_map(|l| l.strip_prefix("VmHWM:"))
                .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        })
        .map_or(0, |kb| kb * 1024)
}

/// Least-squares line through `(x, y)`: slope and R².
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sketch_online(frame: &PhotonFrame, m: u16) -> Result<SketchFrame> {
    let mut out = SketchFrame::empty(frame.rows(), frame.cols(), scheme(frame.t_bins(), m)?)?;
    for r in 0..frame.rows() {
        for c in 0..frame.cols() {
            for &x in frame.pixel(r, c) {
                out.update(r, c, x)?;
            }
        }
    }
    Ok(out)
}

pub fn run(a: &BenchArgs) -> Result<()> {
    if a.m.contains(&0) {
        return Err(Usage("sketch sizes must be at least 1".into()).into());
    }
    let irf = a.irf.load()?;
    let mut configs: Vec<(usize, usize, f64)> = Vec::new();
    if matches!(a.sweep, Sweep::Photons | Sweep::All) {
        configs.extend(PHOTON_SWEEP.iter().map(|&l| (a.rows, a.cols, l)));
    }
    if matches!(a.sweep, Sweep::Dims | Sweep::All) {
        configs.push((a.rows, a.cols, a.photons));
        configs.push((2 * a.rows, 2 * a.cols, a.photons));
    }
    let mut records = Vec::new();
    for &(rows, cols, photons) in &configs {
        let scene = SceneReference::plane(rows, cols, a.bins, a.depth)?;
        let cfg = AcquisitionConfig::new(photons, a.sbr, irf.clone(), a.seed)?;
        let frame = simulate_frame(&scene, &cfg)?;
        for &m in &a.m {
            let model = SketchModel::new(&scheme(a.bins, m)?, &irf)?;
            let fit = FitOptions::new(model.scheme(), &irf, a.k as usize);
            let opts = srt3d_options(fit, &irf, DenoiserArg::Median, 2, a.iters);
            for rep in 0..a.reps {
                let record = |phase, wall_ms| BenchRecord {
                    rows,
                    cols,
                    t_bins: a.bins,
                    m,
                    photons,
                    sbr: a.sbr,
                    phase,
                    rep,
                    wall_ms,
                    peak_rss_bytes: peak_rss_bytes(),
                    seed: a.seed,
                };
                let t0 = Instant::now();
                let sketches = sketch_online(&frame, m)?;
                records.push(record("sketching", t0.elapsed().as_secs_f64() * 1e3));
                let t0 = Instant::now();
                let est = sketchlidar::reconstruct(&sketches, &model, &opts)?;
                records.push(record("inference", t0.elapsed().as_secs_f64() * 1e3));
                drop(est);
            }
        }
    }
    let mut table = String::from(HEADER);
    table.push('\n');
    for r in &records {
        table.push_str(&r.csv_row());
        table.push('\n');
    }
    fs::write(&a.out, table)?;
    let (summary, checks) = summarize(&records);
    fs::write(a.out.with_extension("summary.csv"), &summary)?;
    print!("{summary}{checks}");
    Ok(())
}

/// Median time per configuration and phase, plus the two shape checks:
/// inference spread across photon counts and the sketching line fit.
fn summarize(records: &[BenchRecord]) -> (String, String) {
    type Key = (usize, usize, u16, u64, &'static str);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.rows, r.cols, r.m, r.photons.to_bits(), r.phase)).or_default().push(r.wall_ms);
    }
    let mut out = String::from("rows,cols,m,photons,phase,median_ms,min_ms\n");
    for ((rows, cols, m, p, phase), times) in &groups {
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(out, "{rows},{cols},{m},{},{phase},{:.3},{min:.3}", f64::from_bits(*p), median(times.clone()));
    }
    // shape checks per (size, m) across photon counts
    let mut checks = String::new();
    let mut inference: BTreeMap<(usize, usize, u16), Vec<f64>> = BTreeMap::new();
    let mut sketching: BTreeMap<(usize, usize, u16), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((rows, cols, m, p, phase), times) in &groups {
        let key = (*rows, *cols, *m);
        let med = median(times.clone());
        if *phase == "inference" {
            inference.entry(key).or_default().push(med);
        } else {
            let e = sketching.entry(key).or_default();
            e.0.push(f64::from_bits(*p) * (rows * cols) as f64);
            e.1.push(med);
        }
    }
    for ((rows, cols, m), times) in inference {
        if times.len() < 2 {
            continue;
        }
        let hi = times.iter().copied().fold(f64::MIN, f64::max);
        let lo = times.iter().copied().fold(f64::MAX, f64::min);
        let _ = writeln!(checks, "{rows}x{cols} m={m}: inference max/min across photon counts {:.3}", hi / lo);
        let (x, y) = &sketching[&(rows, cols, m)];
        let (slope, r2) = linear_fit(x, y);
        let _ = writeln!(checks, "{rows}x{cols} m={m}: sketching {slope:.3e} ms per expected photon, R^2 {r2:.4}");
    }
    (out, checks)
}
