//! `sketchlidar` command-line front end.
//!
//! Exit status is 0 on success, 1 on runtime errors and 2 on usage errors
//! (bad flags or parameter values).

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "sketchlidar", version, about = "Sketched single-photon lidar: simulate, sketch, reconstruct, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a built-in synthetic scene.
    Scene(SceneArgs),
    /// Simulate a photon frame from a scene.
    Simulate(SimulateArgs),
    /// Compress a photon frame into per-pixel sketches.
    Sketch(SketchArgs),
    /// Pixelwise sketched fit.
    Fit(FitArgs),
    /// Spatially regularized reconstruction.
    Reconstruct(ReconstructArgs),
    /// Cross-correlation baseline on full photon data.
    Xcorr(XcorrArgs),
    /// Score an estimate against a scene.
    Eval(EvalArgs),
    /// Time sketching and inference over a photon-count or size sweep.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SceneKind {
    Plane,
    Step,
    TwoLayer,
}

#[derive(Args, Debug)]
struct SceneArgs {
    #[arg(long, value_enum, default_value = "plane")]
    kind: SceneKind,
    #[arg(long, default_value_t = 141)]
    rows: usize,
    #[arg(long, default_value_t = 141)]
    cols: usize,
    /// Number of time bins T.
    #[arg(long, default_value_t = 4613)]
    bins: u32,
    /// Depth of the plane, near side of the step or front layer.
    #[arg(long, default_value_t = 2000.0)]
    depth: f64,
    /// Far side of the step or back layer.
    #[arg(long, default_value_t = 3000.0)]
    far: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Mean photons per pixel.
    #[arg(long, value_parser = positive_f64)]
    photons: f64,
    /// Signal-to-background ratio; `inf` for no background.
    #[arg(long, value_parser = positive_f64, default_value = "inf")]
    sbr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gauss:10")]
    irf: IrfSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SketchArgs {
    /// Photon-frame file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "sketch-size", default_value_t = 10, value_parser = clap::value_parser!(u16).range(1..))]
    m: u16,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Sketch-frame file, or a photon-frame file to be sketched first.
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "sketch-size", default_value_t = 10, value_parser = clap::value_parser!(u16).range(1..))]
    m: u16,
    #[arg(long, default_value = "gauss:10")]
    irf: IrfSpec,
    /// Largest number of surfaces per pixel.
    #[arg(long = "surfaces", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    k: u16,
    /// Estimate manifest to write.
    #[arg(long)]
    out: PathBuf,
    /// Point-cloud file; defaults to the manifest path with a `.ply` extension.
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Factor from bins to PLY `z` units.
    #[arg(long, default_value_t = 1.0)]
    ply_scale: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DenoiserArg {
    Median,
    Bilateral,
    None,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_enum, default_value = "median")]
    denoiser: DenoiserArg,
    /// Denoiser window radius; 0 disables the regularizer.
    #[arg(long, default_value_t = 2)]
    radius: usize,
    /// Outer iterations.
    #[arg(long, default_value_t = 10)]
    iters: usize,
}

#[derive(Args, Debug)]
struct XcorrArgs {
    /// Photon-frame file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "gauss:10")]
    irf: IrfSpec,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ply: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    ply_scale: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Estimate manifest.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Matching tolerance in bins.
    #[arg(long, value_parser = positive_f64, default_value_t = 4.0)]
    tau: f64,
    /// SBR of the acquisition; scene intensities are scaled by SBR/(1+SBR).
    #[arg(long, value_parser = positive_f64, default_value = "inf")]
    sbr: f64,
    /// Report file (key-value); the match table goes next to it as `.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Sweep {
    /// λ ∈ {10, 50, 100, 500, 1000} at the base size.
    Photons,
    /// 1× and 2× the base size at `--photons`.
    Dims,
    All,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long = "bench-sweep", value_enum, default_value = "photons")]
    sweep: Sweep,
    /// Sketch sizes, comma separated.
    #[arg(long = "sketch-size", value_delimiter = ',', default_value = "5,10")]
    m: Vec<u16>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, default_value_t = 141)]
    rows: usize,
    #[arg(long, default_value_t = 141)]
    cols: usize,
    #[arg(long, default_value_t = 4613)]
    bins: u32,
    /// Depth of the benchmark plane.
    #[arg(long, default_value_t = 2000.0)]
    depth: f64,
    /// Photons per pixel for the size sweep.
    #[arg(long, value_parser = positive_f64, default_value_t = 100.0)]
    photons: f64,
    #[arg(long, value_parser = positive_f64, default_value_t = 1.0)]
    sbr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gauss:10")]
    irf: IrfSpec,
    #[arg(long = "surfaces", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    k: u16,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Record table; a summary table is written next to it.
    #[arg(long)]
    out: PathBuf,
}

/// Instrument response given on the command line.
#[derive(Debug, Clone)]
enum IrfSpec {
    Delta,
    Gauss(f64),
    File(PathBuf),
}

impl FromStr for IrfSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "delta" {
            return Ok(Self::Delta);
        }
        if let Some(v) = s.strip_prefix("gauss:") {
            let sigma = positive_f64(v)?;
            if !sigma.is_finite() {
                return Err("gaussian width must be finite".into());
            }
            return Ok(Self::Gauss(sigma));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(p)));
        }
        Err(format!("expected delta, gauss:<sigma> or file:<path>, got `{s}`"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be positive"))
    }
}

/// Marks an error as the caller's fault (exit status 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_status(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<Usage>() || matches!(e.downcast_ref::<sketchlidar::Error>(), Some(sketchlidar::Error::InvalidParameter(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scene(a) => commands::scene(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Sketch(a) => commands::sketch(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Xcorr(a) => commands::xcorr(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => bench::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
