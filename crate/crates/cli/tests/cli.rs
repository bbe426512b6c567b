use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sketchlidar::io::{read_estimate, read_photon_frame, read_sketch_frame, sketch_file_size, write_estimate};
use sketchlidar::{FrequencyScheme, PixelEstimate, PointCloudEstimate, SketchFrame};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchlidar")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small plane scene plus a simulated photon frame.
fn small_frame(dir: &TempDir, photons: &str, seed: &str) -> (PathBuf, PathBuf) {
    let scene = dir.path().join("scene.txt");
    let frame = dir.path().join(format!("photons-{seed}.bin"));
    ok(&["scene", "--rows", "6", "--cols", "5", "--bins", "500", "--depth", "200", "--out", p(&scene)]);
    ok(&["simulate", "--scene", p(&scene), "--photons", photons, "--sbr", "4", "--seed", seed, "--irf", "gauss:3", "--out", p(&frame)]);
    (scene, frame)
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = small_frame(&dir, "20", "0");
    let out = dir.path().join("x.bin");
    assert_eq!(run(&["simulate", "--scene", p(&scene), "--photons", "0", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--scene", p(&scene), "--photons", "5", "--irf", "box:3", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--scene", p(&scene), "--photons", "5", "--irf", "gauss:-1", "--out", p(&out)]).status.code(), Some(2));
    let missing = dir.path().join("nope.txt");
    assert_eq!(run(&["simulate", "--scene", p(&missing), "--photons", "5", "--out", p(&out)]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scene", p(&scene), "--photons", "5", "--out", p(&out)]).status.code(), Some(0));
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = small_frame(&dir, "30", "7");
    let first = std::fs::read(&a).unwrap();
    let (_, b) = small_frame(&dir, "30", "7");
    assert_eq!(first, std::fs::read(&b).unwrap());
    let (_, c) = small_frame(&dir, "30", "8");
    assert_ne!(first, std::fs::read(&c).unwrap());
}

#[test]
fn sketch_command_matches_in_memory_sketches() {
    let dir = tempfile::tempdir().unwrap();
    let (_, frame) = small_frame(&dir, "40", "1");
    let out = dir.path().join("frame.sk");
    let stdout = ok(&["sketch", "--input", p(&frame), "--sketch-size", "4", "--out", p(&out)]);
    assert!(stdout.contains("compression_ratio"));
    assert_eq!(std::fs::metadata(&out).unwrap().len(), sketch_file_size(6, 5, 4));
    let photons = read_photon_frame(&frame).unwrap();
    let expected = SketchFrame::from_photons(&photons, &FrequencyScheme::new(500, 4).unwrap()).unwrap();
    let got = read_sketch_frame(&out).unwrap();
    for (a, b) in expected.sketches().iter().zip(got.sketches()) {
        assert_eq!(a.count(), b.count());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() <= 1e-12);
        }
    }
}

#[test]
fn reconstruct_without_regularizer_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (_, frame) = small_frame(&dir, "200", "2");
    let sk = dir.path().join("frame.sk");
    ok(&["sketch", "--input", p(&frame), "--sketch-size", "8", "--out", p(&sk)]);
    let fit = dir.path().join("fit.txt");
    let rec = dir.path().join("rec.txt");
    ok(&["fit", "--input", p(&sk), "--irf", "gauss:3", "--out", p(&fit)]);
    ok(&["reconstruct", "--input", p(&sk), "--irf", "gauss:3", "--radius", "0", "--out", p(&rec)]);
    assert!(dir.path().join("fit.ply").exists());
    let (a, b) = (read_estimate(&fit).unwrap(), read_estimate(&rec).unwrap());
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        assert_eq!(x.surfaces.len(), y.surfaces.len());
        for (s, t) in x.surfaces.iter().zip(&y.surfaces) {
            assert!((s.depth - t.depth).abs() <= 1e-3 && (s.intensity - t.intensity).abs() <= 1e-4);
        }
    }
}

#[test]
fn fit_on_empty_frame_reports_no_surface() {
    let dir = tempfile::tempdir().unwrap();
    let sk = dir.path().join("empty.sk");
    let frame = SketchFrame::empty(3, 3, FrequencyScheme::new(500, 4).unwrap()).unwrap();
    sketchlidar::io::write_sketch_frame(&sk, &frame).unwrap();
    let out = run(&["fit", "--input", p(&sk), "--irf", "gauss:3", "--out", p(&dir.path().join("e.txt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no surface"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (scene_path, _) = small_frame(&dir, "10", "0");
    let scene = sketchlidar::io::read_scene(&scene_path).unwrap();
    let pixels = scene.pixels().iter().map(|s| PixelEstimate::new(s.clone(), 10)).collect();
    let est = PointCloudEstimate::new(scene.rows(), scene.cols(), scene.t_bins(), pixels).unwrap();
    let est_path = dir.path().join("gt.txt");
    write_estimate(&est_path, &est).unwrap();
    let report = dir.path().join("report.txt");
    let stdout = ok(&["eval", "--input", p(&est_path), "--scene", p(&scene_path), "--out", p(&report)]);
    assert!(stdout.lines().any(|l| l == "dae=0"), "{stdout}");
    assert!(stdout.lines().any(|l| l == "true_rate=1"), "{stdout}");
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn bench_writes_one_row_per_phase_and_rep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&[
        "bench", "--bench-sweep", "dims", "--sketch-size", "3,4", "--reps", "2", "--rows", "4", "--cols", "4", "--bins", "300",
        "--depth", "100", "--photons", "20", "--irf", "gauss:2", "--iters", "2", "--out", p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    // 2 sizes × 2 sketch sizes × 2 phases × 2 reps
    assert_eq!(text.lines().count(), 1 + 16);
    assert!(text.starts_with("rows,cols,t_bins,m,photons,sbr,phase,rep,wall_ms,peak_rss_bytes,seed"));
    let summary = std::fs::read_to_string(out.with_extension("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 8);
}
