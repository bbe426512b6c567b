//! Single-photon lidar reconstruction from characteristic-function sketches.
//!
//! Photon time stamps of each pixel are compressed online into `m` samples of
//! their empirical characteristic function. Depths and intensities of up to
//! `K` surfaces per pixel are then estimated from the sketches alone, either
//! pixel by pixel ([`pixelwise`]) or jointly with a plug-and-play spatial
//! regularizer ([`regularized`]). Solver cost depends on the frame size and
//! `m`, never on the number of photons.

pub mod cloud;
pub mod denoise;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pixelwise;
pub mod regularized;
pub mod sim;
pub mod stream;

pub use cloud::{PixelEstimate, PointCloudEstimate};
pub use error::{Error, Result};
pub use metrics::{detection_match, evaluate, xcorr_depth, xcorr_frame, EvalReport};
pub use model::{
    background_cf, irf_fourier, model_cf, sketch_loss, sketch_loss_gradient, FrequencyScheme, InstrumentResponse,
    LossGradient, PixelParams, Sketch, SketchModel, Surface,
};
pub use denoise::{DenoiserKind, PointCloudDenoiser};
pub use pixelwise::{fit_frame, fit_pixel, FitOptions, PixelFit};
pub use regularized::{reconstruct, Srt3dOptions};
pub use sim::{simulate_frame, AcquisitionConfig, SceneReference};
pub use stream::{merge_sketches, sketch_from_histogram, sketch_from_list, update_sketch, PhotonFrame, SketchFrame};
