//! File formats.
//!
//! Binary formats are little-endian and start with an 8-byte magic, a `u16`
//! version and the frame shape:
//!
//! ```text
//! photons:  "SLPHOTON" ver:u16 rows:u32 cols:u32 T:u32          (22 bytes)
//!           per pixel, row-major: count:u32, count × stamp:u32
//! sketches: "SLSKETCH" ver:u16 rows:u32 cols:u32 T:u32 m:u16    (24 bytes)
//!           per pixel, row-major: count:u64, m × (re:f64, im:f64)
//! ```
//!
//! Scenes and estimates are text: a manifest of `key value` lines naming one
//! comma-separated grid per surface layer for depths and for intensities
//! (layer `k` holds each pixel's `k`-th surface by depth, `-` where the pixel
//! has fewer surfaces). Estimates add a grid of photon counts. Floats are
//! written in shortest round-trip form, so text round trips are exact.
//!
//! Point clouds are exported as ASCII PLY with `x, y, z, intensity` vertices.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::cloud::{PixelEstimate, PointCloudEstimate};
use crate::error::{Error, Result};
use crate::model::{FrequencyScheme, Sketch, Surface};
use crate::sim::{validate_truth_pixel, SceneReference};
use crate::stream::{PhotonFrame, SketchFrame};

pub const PHOTON_MAGIC: [u8; 8] = *b"SLPHOTON";
pub const SKETCH_MAGIC: [u8; 8] = *b"SLSKETCH";
pub const FORMAT_VERSION: u16 = 1;
pub const PHOTON_HEADER_BYTES: usize = 22;
pub const SKETCH_HEADER_BYTES: usize = 24;

/// Exact size of a sketch file: `24 + rows·cols·(8 + 16m)` bytes.
pub fn sketch_file_size(rows: usize, cols: usize, m: usize) -> u64 {
    SKETCH_HEADER_BYTES as u64 + (rows * cols) as u64 * (8 + 16 * m as u64)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedFile(format!("{what} at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Magic, version, rows, cols, T.
fn read_header(r: &mut Reader, magic: [u8; 8]) -> Result<(usize, usize, u32)> {
    let found: [u8; 8] = r.take(8, "magic")?.try_into().expect("8 bytes");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let t_bins = r.u32("T")?;
    if rows == 0 || cols == 0 {
        return Err(Error::Corrupt(format!("frame shape {rows}x{cols}")));
    }
    Ok((rows, cols, t_bins))
}

fn write_header(out: &mut Vec<u8>, magic: [u8; 8], rows: usize, cols: usize, t_bins: u32) -> Result<()> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidParameter(format!("dimension {v} exceeds u32")));
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(rows)?.to_le_bytes());
    out.extend_from_slice(&dim(cols)?.to_le_bytes());
    out.extend_from_slice(&t_bins.to_le_bytes());
    Ok(())
}

pub fn encode_photon_frame(frame: &PhotonFrame) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(PHOTON_HEADER_BYTES + 4 * (frame.pixels().len() + frame.total_photons() as usize));
    write_header(&mut out, PHOTON_MAGIC, frame.rows(), frame.cols(), frame.t_bins())?;
    for stamps in frame.pixels() {
        let n = u32::try_from(stamps.len()).map_err(|_| Error::InvalidParameter("pixel has over 2^32 photons".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
        for &x in stamps {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_photon_frame(bytes: &[u8]) -> Result<PhotonFrame> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (rows, cols, t_bins) = read_header(&mut r, PHOTON_MAGIC)?;
    if t_bins == 0 {
        return Err(Error::Corrupt("T = 0".into()));
    }
    let mut pixels = Vec::with_capacity(rows.saturating_mul(cols).min(bytes.len() / 4));
    for idx in 0..rows * cols {
        let n = r.u32("photon count")? as usize;
        let raw = r.take(4 * n, "time stamps")?;
        let mut stamps = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            let x = u32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if x >= t_bins {
                return Err(Error::StampOutOfRange { row: idx / cols, col: idx % cols, stamp: x, t_bins });
            }
            stamps.push(x);
        }
        pixels.push(stamps);
    }
    r.finish()?;
    PhotonFrame::new(rows, cols, t_bins, pixels)
}

pub fn encode_sketch_frame(frame: &SketchFrame) -> Result<Vec<u8>> {
    let m = frame.scheme().m();
    let m16 = u16::try_from(m).map_err(|_| Error::InvalidParameter(format!("m = {m} exceeds u16")))?;
    let mut out = Vec::with_capacity(sketch_file_size(frame.rows(), frame.cols(), m) as usize);
    write_header(&mut out, SKETCH_MAGIC, frame.rows(), frame.cols(), frame.scheme().t_bins())?;
    out.extend_from_slice(&m16.to_le_bytes());
    for s in frame.sketches() {
        out.extend_from_slice(&s.count().to_le_bytes());
        for z in s.values() {
            out.extend_from_slice(&z.re.to_bits().to_le_bytes());
            out.extend_from_slice(&z.im.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_sketch_frame(bytes: &[u8]) -> Result<SketchFrame> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (rows, cols, t_bins) = read_header(&mut r, SKETCH_MAGIC)?;
    let m = r.u16("m")? as usize;
    let scheme = FrequencyScheme::new(t_bins, m).map_err(|e| Error::Corrupt(e.to_string()))?;
    let expected = sketch_file_size(rows, cols, m);
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedFile(format!("{} of {expected} bytes", bytes.len())));
    }
    let mut sketches = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let count = r.u64("photon count")?;
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            let re = r.f64("sketch value")?;
            let im = r.f64("sketch value")?;
            values.push(Complex64::new(re, im));
        }
        let s = Sketch::from_parts(values, count)
            .map_err(|e| Error::Corrupt(format!("pixel ({}, {}): {e}", idx / cols, idx % cols)))?;
        sketches.push(s);
    }
    r.finish()?;
    SketchFrame::new(rows, cols, scheme, sketches)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_photon_frame(path: &Path, frame: &PhotonFrame) -> Result<()> {
    write_bytes(path, &encode_photon_frame(frame)?)
}

pub fn read_photon_frame(path: &Path) -> Result<PhotonFrame> {
    decode_photon_frame(&fs::read(path)?)
}

/// Sketches a photon-frame stream without holding any pixel's stamps: each
/// stamp is folded into its pixel's sketch as it is read. Returns the frame
/// and the number of bytes consumed.
pub fn sketch_photon_stream<R: Read>(reader: R, m: usize) -> Result<(SketchFrame, u64)> {
    let mut input = BufReader::new(reader);
    let mut fill = |buf: &mut [u8], what: &str| -> Result<()> {
        input.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::TruncatedFile(what.to_string()),
            _ => Error::Io(e),
        })
    };
    let mut head = [0u8; PHOTON_HEADER_BYTES];
    fill(&mut head, "header")?;
    let (rows, cols, t_bins) = read_header(&mut Reader { buf: &head, pos: 0 }, PHOTON_MAGIC)?;
    let scheme = FrequencyScheme::new(t_bins, m)?;
    let mut frame = SketchFrame::empty(rows, cols, scheme)?;
    let mut consumed = PHOTON_HEADER_BYTES as u64;
    let mut word = [0u8; 4];
    let mut chunk = vec![0u8; 4 * 4096];
    for idx in 0..rows * cols {
        let (row, col) = (idx / cols, idx % cols);
        fill(&mut word, "photon count")?;
        let mut left = u32::from_le_bytes(word) as usize;
        consumed += 4 + 4 * left as u64;
        while left > 0 {
            let take = left.min(4096);
            fill(&mut chunk[..4 * take], "time stamps")?;
            for b in chunk[..4 * take].chunks_exact(4) {
                let x = u32::from_le_bytes(b.try_into().expect("4 bytes"));
                if x >= t_bins {
                    return Err(Error::StampOutOfRange { row, col, stamp: x, t_bins });
                }
                frame.update(row, col, x)?;
            }
            left -= take;
        }
    }
    if fill(&mut word[..1], "").is_ok() {
        return Err(Error::Corrupt("trailing bytes after the last pixel".into()));
    }
    Ok((frame, consumed))
}

pub fn sketch_photon_file(path: &Path, m: usize) -> Result<(SketchFrame, u64)> {
    sketch_photon_stream(fs::File::open(path)?, m)
}

pub fn write_sketch_frame(path: &Path, frame: &SketchFrame) -> Result<()> {
    let bytes = encode_sketch_frame(frame)?;
    debug_assert_eq!(bytes.len() as u64, sketch_file_size(frame.rows(), frame.cols(), frame.scheme().m()));
    write_bytes(path, &bytes)
}

pub fn read_sketch_frame(path: &Path) -> Result<SketchFrame> {
    decode_sketch_frame(&fs::read(path)?)
}

/// Per-pixel surface lists written as layered grids.
struct Layered<'a> {
    kind: &'static str,
    rows: usize,
    cols: usize,
    t_bins: u32,
    pixels: Vec<&'a [Surface]>,
    counts: Option<Vec<u64>>,
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn file_stem(manifest: &Path) -> String {
    manifest.file_stem().map_or_else(|| "layers".to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_layered(path: &Path, data: &Layered) -> Result<()> {
    let layers = data.pixels.iter().map(|p| p.len()).max().unwrap_or(0);
    let stem = file_stem(path);
    let mut manifest = format!("# sketchlidar {}\nformat {}\nversion {FORMAT_VERSION}\n", data.kind, data.kind);
    let _ = writeln!(manifest, "rows {}\ncols {}\nt_bins {}\nlayers {layers}", data.rows, data.cols, data.t_bins);
    for k in 0..layers {
        for (field, pick) in [("depth", 0usize), ("intensity", 1)] {
            let name = format!("{stem}.{field}{k}.csv");
            let mut grid = String::new();
            for r in 0..data.rows {
                let line: Vec<String> = (0..data.cols)
                    .map(|c| match data.pixels[r * data.cols + c].get(k) {
                        Some(s) => format!("{}", if pick == 0 { s.depth } else { s.intensity }),
                        None => "-".to_string(),
                    })
                    .collect();
                grid.push_str(&line.join(","));
                grid.push('\n');
            }
            fs::write(sibling(path, &name), grid)?;
            let _ = writeln!(manifest, "{field} {k} {name}");
        }
    }
    if let Some(counts) = &data.counts {
        let name = format!("{stem}.counts.csv");
        let mut grid = String::new();
        for r in 0..data.rows {
            let line: Vec<String> = (0..data.cols).map(|c| counts[r * data.cols + c].to_string()).collect();
            grid.push_str(&line.join(","));
            grid.push('\n');
        }
        fs::write(sibling(path, &name), grid)?;
        let _ = writeln!(manifest, "counts {name}");
    }
    fs::write(path, manifest)?;
    Ok(())
}

struct Manifest {
    rows: usize,
    cols: usize,
    t_bins: u32,
    depth: Vec<String>,
    intensity: Vec<String>,
    counts: Option<String>,
}

fn parse_manifest(path: &Path, kind: &str) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let mut fields = std::collections::HashMap::new();
    let mut depth: Vec<Option<String>> = Vec::new();
    let mut intensity: Vec<Option<String>> = Vec::new();
    let mut counts = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [key @ ("depth" | "intensity"), k, name] => {
                let k: usize = k.parse().map_err(|_| Error::Manifest(format!("bad layer index in `{line}`")))?;
                let list = if *key == "depth" { &mut depth } else { &mut intensity };
                if list.len() <= k {
                    list.resize(k + 1, None);
                }
                list[k] = Some(name.to_string());
            }
            ["counts", name] => counts = Some(name.to_string()),
            [key, value] => {
                fields.insert(key.to_string(), value.to_string());
            }
            _ => return Err(Error::Manifest(format!("unrecognized line `{line}`"))),
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| Error::Manifest(format!("missing `{k}`")));
    if get("format")? != kind {
        return Err(Error::Manifest(format!("expected format `{kind}`, found `{}`", get("format")?)));
    }
    let version: u16 = get("version")?.parse().map_err(|_| Error::Manifest("bad version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Manifest(format!("bad `{k}`"))) };
    let (rows, cols, t_bins, layers) = (num("rows")? as usize, num("cols")? as usize, num("t_bins")?, num("layers")? as usize);
    if rows == 0 || cols == 0 || t_bins == 0 || t_bins > u32::MAX as u64 {
        return Err(Error::Manifest(format!("bad shape {rows}x{cols}, T = {t_bins}")));
    }
    let complete = |list: Vec<Option<String>>, what: &str| -> Result<Vec<String>> {
        if list.len() > layers {
            return Err(Error::Manifest(format!("{what} layer {} beyond declared {layers} layers", list.len() - 1)));
        }
        (0..layers)
            .map(|k| list.get(k).cloned().flatten().ok_or_else(|| Error::Manifest(format!("missing {what} layer {k}"))))
            .collect()
    };
    Ok(Manifest {
        rows,
        cols,
        t_bins: t_bins as u32,
        depth: complete(depth, "depth")?,
        intensity: complete(intensity, "intensity")?,
        counts,
    })
}

/// Reads a grid of optional cells; `-` is an absent value.
fn read_grid<T: std::str::FromStr>(path: &Path, name: &str, rows: usize, cols: usize) -> Result<Vec<Option<T>>> {
    let full = sibling(path, name);
    let text = fs::read_to_string(&full).map_err(|e| Error::Manifest(format!("layer file {}: {e}", full.display())))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != rows {
        return Err(Error::Parse { file: name.into(), row: lines.len().min(rows), col: 0, msg: format!("expected {rows} rows, found {}", lines.len()) });
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (r, line) in lines.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols {
            return Err(Error::Parse { file: name.into(), row: r, col: cells.len().min(cols), msg: format!("expected {cols} columns, found {}", cells.len()) });
        }
        for (c, cell) in cells.iter().enumerate() {
            if *cell == "-" {
                out.push(None);
            } else {
                let v = cell
                    .parse::<T>()
                    .map_err(|_| Error::Parse { file: name.into(), row: r, col: c, msg: format!("cannot parse `{cell}`") })?;
                out.push(Some(v));
            }
        }
    }
    Ok(out)
}

fn read_layers(path: &Path, m: &Manifest) -> Result<Vec<Vec<Surface>>> {
    let n = m.rows * m.cols;
    let mut pixels: Vec<Vec<Surface>> = vec![Vec::new(); n];
    let mut open = vec![true; n];
    for (k, (dname, iname)) in m.depth.iter().zip(&m.intensity).enumerate() {
        let depths: Vec<Option<f64>> = read_grid(path, dname, m.rows, m.cols)?;
        let intens: Vec<Option<f64>> = read_grid(path, iname, m.rows, m.cols)?;
        for idx in 0..n {
            let (row, col) = (idx / m.cols, idx % m.cols);
            match (depths[idx], intens[idx]) {
                (Some(d), Some(a)) => {
                    if !open[idx] {
                        return Err(Error::Parse { file: dname.clone(), row, col, msg: format!("layer {k} present after an absent layer") });
                    }
                    if !(d.is_finite() && d >= 0.0 && d < m.t_bins as f64) {
                        return Err(Error::Range { file: dname.clone(), row, col, msg: format!("depth {d} outside [0, {})", m.t_bins) });
                    }
                    if !(a.is_finite() && a >= 0.0) {
                        return Err(Error::Range { file: iname.clone(), row, col, msg: format!("intensity {a} is negative") });
                    }
                    pixels[idx].push(Surface::new(d, a));
                }
                (None, None) => open[idx] = false,
                _ => {
                    return Err(Error::Parse { file: dname.clone(), row, col, msg: "depth and intensity layers disagree on presence".into() })
                }
            }
        }
    }
    Ok(pixels)
}

pub fn write_scene(path: &Path, scene: &SceneReference) -> Result<()> {
    write_layered(
        path,
        &Layered {
            kind: "scene",
            rows: scene.rows(),
            cols: scene.cols(),
            t_bins: scene.t_bins(),
            pixels: scene.pixels().iter().map(Vec::as_slice).collect(),
            counts: None,
        },
    )
}

pub fn read_scene(path: &Path) -> Result<SceneReference> {
    let m = parse_manifest(path, "scene")?;
    let pixels = read_layers(path, &m)?;
    for (idx, p) in pixels.iter().enumerate() {
        validate_truth_pixel(p, m.t_bins).map_err(|msg| Error::Range {
            file: m.intensity.first().cloned().unwrap_or_default(),
            row: idx / m.cols,
            col: idx % m.cols,
            msg,
        })?;
    }
    SceneReference::new(m.rows, m.cols, m.t_bins, pixels)
}

pub fn write_estimate(path: &Path, est: &PointCloudEstimate) -> Result<()> {
    write_layered(
        path,
        &Layered {
            kind: "estimate",
            rows: est.rows(),
            cols: est.cols(),
            t_bins: est.t_bins(),
            pixels: est.pixels().iter().map(|p| p.surfaces.as_slice()).collect(),
            counts: Some(est.pixels().iter().map(|p| p.count).collect()),
        },
    )
}

pub fn read_estimate(path: &Path) -> Result<PointCloudEstimate> {
    let m = parse_manifest(path, "estimate")?;
    let pixels = read_layers(path, &m)?;
    let counts: Vec<Option<u64>> = match &m.counts {
        Some(name) => read_grid(path, name, m.rows, m.cols)?,
        None => return Err(Error::Manifest("missing `counts`".into())),
    };
    let cname = m.counts.clone().unwrap_or_default();
    let mut out = Vec::with_capacity(pixels.len());
    for (idx, (surfaces, count)) in pixels.into_iter().zip(counts).enumerate() {
        let (row, col) = (idx / m.cols, idx % m.cols);
        let count = count.ok_or_else(|| Error::Parse { file: cname.clone(), row, col, msg: "missing count".into() })?;
        let total: f64 = surfaces.iter().map(|s| s.intensity).sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::Range {
                file: m.intensity.first().cloned().unwrap_or_default(),
                row,
                col,
                msg: format!("intensities sum to {total}"),
            });
        }
        if surfaces.windows(2).any(|w| w[0].depth > w[1].depth) {
            return Err(Error::Range { file: m.depth[0].clone(), row, col, msg: "surfaces not sorted by depth".into() });
        }
        out.push(PixelEstimate::new(surfaces, count));
    }
    PointCloudEstimate::new(m.rows, m.cols, m.t_bins, out)
}

/// ASCII PLY export: `x` = column, `y` = row, `z` = depth × `scale`.
pub fn ply_string(est: &PointCloudEstimate, scale: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double intensity\nend_header\n",
        est.total_surfaces()
    );
    for r in 0..est.rows() {
        for c in 0..est.cols() {
            for sf in &est.pixel(r, c).surfaces {
                let _ = writeln!(s, "{c} {r} {} {}", sf.depth * scale, sf.intensity);
            }
        }
    }
    s
}

pub fn write_ply(path: &Path, est: &PointCloudEstimate, scale: f64) -> Result<()> {
    write_bytes(path, ply_string(est, scale).as_bytes())
}
