use thiserror::Error;

/// Errors produced by the sketching, solving and file-format layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sketch is empty (no photons)")]
    EmptySketch,

    #[error("frame contains no photons")]
    EmptyFrame,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("time stamp {stamp} outside [0, {t_bins})")]
    OutOfRange { stamp: u64, t_bins: u32 },

    #[error("sketch schemes do not match: {0}")]
    SchemeMismatch(String),

    #[error("bad binning: {bins} bins of width {width} do not cover {t_bins} time bins")]
    BadBinning { bins: usize, width: u32, t_bins: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no surface survived fitting")]
    NoSurfaceFound,

    #[error("first sketch entry has zero magnitude")]
    ZeroMagnitude,

    #[error("intensity subproblem is ill-conditioned (column coherence {coherence:.6})")]
    IllConditioned { coherence: f64 },

    #[error("ground truth contains no surfaces")]
    NoGroundTruth,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("stamp {stamp} at pixel ({row}, {col}) outside [0, {t_bins})")]
    StampOutOfRange { row: usize, col: usize, stamp: u32, t_bins: u32 },

    #[error("parse error in {file} at row {row}, col {col}: {msg}")]
    Parse { file: String, row: usize, col: usize, msg: String },

    #[error("value out of range in {file} at row {row}, col {col}: {msg}")]
    Range { file: String, row: usize, col: usize, msg: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
