use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sketchlidar::io::{
    read_estimate, read_photon_frame, read_scene, read_sketch_frame, sketch_photon_file, write_estimate, write_ply,
    write_scene, write_sketch_frame, PHOTON_MAGIC,
};
use sketchlidar::{
    evaluate, fit_frame, simulate_frame, xcorr_frame, AcquisitionConfig, DenoiserKind, Error, FitOptions,
    FrequencyScheme, InstrumentResponse, PointCloudEstimate, SceneReference, SketchFrame, SketchModel, Srt3dOptions,
    Surface,
};

use crate::{
    DenoiserArg, EvalArgs, FitArgs, IrfSpec, ReconstructArgs, SceneArgs, SceneKind, SimulateArgs, SketchArgs, Usage,
    XcorrArgs,
};

impl IrfSpec {
    pub(crate) fn load(&self) -> Result<InstrumentResponse> {
        Ok(match self {
            IrfSpec::Delta => InstrumentResponse::delta(),
            IrfSpec::Gauss(sigma) => InstrumentResponse::gaussian(*sigma)?,
            IrfSpec::File(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let samples = text
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>().with_context(|| format!("{}: bad sample `{t}`", path.display())))
                    .collect::<Result<Vec<_>>>()?;
                InstrumentResponse::from_samples_peak(samples)?
            }
        })
    }
}

pub fn scene(a: &SceneArgs) -> Result<()> {
    let scene = match a.kind {
        SceneKind::Plane => SceneReference::plane(a.rows, a.cols, a.bins, a.depth)?,
        SceneKind::Step => SceneReference::step_edge(a.rows, a.cols, a.bins, a.depth, a.far)?,
        SceneKind::TwoLayer => {
            SceneReference::two_layer(a.rows, a.cols, a.bins, Surface::new(a.depth, 0.5), Surface::new(a.far, 0.5))?
        }
    };
    write_scene(&a.out, &scene)?;
    println!("scene {}x{}, T={}, {} surfaces", scene.rows(), scene.cols(), scene.t_bins(), scene.total_surfaces());
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let scene = read_scene(&a.scene).with_context(|| format!("reading scene {}", a.scene.display()))?;
    let cfg = AcquisitionConfig::new(a.photons, a.sbr, a.irf.load()?, a.seed)?;
    let frame = simulate_frame(&scene, &cfg)?;
    sketchlidar::io::write_photon_frame(&a.out, &frame)?;
    println!("photons {}", frame.total_photons());
    Ok(())
}

pub fn sketch(a: &SketchArgs) -> Result<()> {
    let (frame, read) = sketch_photon_file(&a.input, a.m as usize)?;
    write_sketch_frame(&a.out, &frame)?;
    let written = fs::metadata(&a.out)?.len();
    println!("photons {}", frame.total_photons());
    println!("bytes_in {read}");
    println!("bytes_out {written}");
    println!("compression_ratio {:.4}", read as f64 / written as f64);
    Ok(())
}

fn is_photon_file(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut magic = [0u8; 8];
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read_exact(&mut magic).is_ok() && magic == PHOTON_MAGIC)
}

/// Reads a sketch frame, sketching a photon frame on the fly if given one.
fn load_sketches(path: &Path, m: usize) -> Result<SketchFrame> {
    if is_photon_file(path)? {
        Ok(sketch_photon_file(path, m)?.0)
    } else {
        Ok(read_sketch_frame(path).with_context(|| format!("reading {}", path.display()))?)
    }
}

fn emit(est: &PointCloudEstimate, out: &Path, ply: Option<&PathBuf>, scale: f64, elapsed_ms: f64) -> Result<()> {
    write_estimate(out, est)?;
    let ply_path = ply.cloned().unwrap_or_else(|| out.with_extension("ply"));
    write_ply(&ply_path, est, scale)?;
    let occupied = est.pixels().iter().filter(|p| !p.surfaces.is_empty()).count();
    let depths: Vec<f64> = est.pixels().iter().flat_map(|p| p.surfaces.iter().map(|s| s.depth)).collect();
    println!("pixels {}", est.rows() * est.cols());
    println!("occupied_pixels {occupied}");
    println!("surfaces {}", est.total_surfaces());
    if !depths.is_empty() {
        println!("mean_depth {:.4}", depths.iter().sum::<f64>() / depths.len() as f64);
    }
    println!("elapsed_ms {elapsed_ms:.3}");
    Ok(())
}

fn fit_setup(a: &FitArgs) -> Result<(SketchFrame, SketchModel, InstrumentResponse, FitOptions)> {
    let frame = load_sketches(&a.input, a.m as usize)?;
    let irf = a.irf.load()?;
    let model = SketchModel::new(frame.scheme(), &irf)?;
    let opts = FitOptions::new(frame.scheme(), &irf, a.k as usize);
    Ok((frame, model, irf, opts))
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let (frame, model, _, opts) = fit_setup(a)?;
    let t0 = Instant::now();
    let est = fit_frame(&frame, &model, &opts)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    if est.total_surfaces() == 0 {
        return Err(Error::NoSurfaceFound.into());
    }
    emit(&est, &a.out, a.ply.as_ref(), a.ply_scale, ms)
}

pub(crate) fn srt3d_options(fit: FitOptions, irf: &InstrumentResponse, denoiser: DenoiserArg, radius: usize, iters: usize) -> Srt3dOptions {
    let mut opts = match (denoiser, radius) {
        (DenoiserArg::None, _) | (_, 0) => Srt3dOptions::disabled(fit, irf),
        (DenoiserArg::Median, r) => Srt3dOptions { radius: r, ..Srt3dOptions::new(fit, irf) },
        (DenoiserArg::Bilateral, r) => {
            Srt3dOptions { radius: r, denoiser: DenoiserKind::Bilateral, ..Srt3dOptions::new(fit, irf) }
        }
    };
    opts.outer_iters = iters;
    opts
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let (frame, model, irf, fit) = fit_setup(&a.fit)?;
    let opts = srt3d_options(fit, &irf, a.denoiser, a.radius, a.iters);
    let t0 = Instant::now();
    let est = sketchlidar::reconstruct(&frame, &model, &opts)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    emit(&est, &a.fit.out, a.fit.ply.as_ref(), a.fit.ply_scale, ms)
}

pub fn xcorr(a: &XcorrArgs) -> Result<()> {
    if !is_photon_file(&a.input)? {
        bail!(Usage(format!("{} is not a photon-frame file", a.input.display())));
    }
    let frame = read_photon_frame(&a.input)?;
    let irf = a.irf.load()?;
    let t0 = Instant::now();
    let est = xcorr_frame(&frame, &irf)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    emit(&est, &a.out, a.ply.as_ref(), a.ply_scale, ms)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let est = read_estimate(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let scene = read_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    if (est.rows(), est.cols()) != (scene.rows(), scene.cols()) {
        bail!(Usage(format!(
            "estimate is {}x{} but scene is {}x{}",
            est.rows(),
            est.cols(),
            scene.rows(),
            scene.cols()
        )));
    }
    let factor = if a.sbr.is_infinite() { 1.0 } else { a.sbr / (1.0 + a.sbr) };
    let report = evaluate(&est, &scene.scaled_surfaces(factor), a.tau)?;
    let text = report.to_key_value();
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, &text)?;
        fs::write(out.with_extension("csv"), report.matches_csv())?;
    }
    Ok(())
}

/// Scheme check shared with the bench: `m` must fit below `T`.
pub(crate) fn scheme(t_bins: u32, m: u16) -> Result<FrequencyScheme> {
    Ok(FrequencyScheme::new(t_bins, m as usize)?)
}
