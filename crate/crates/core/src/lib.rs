//! Omnidirectional image super-resolution by tangent-plane projection and
//! pseudo-inverse consistency correction.

pub mod correct;
pub mod degrade;
pub mod denoise;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod resample;
pub mod synth;

pub use correct::GammaConfig;
pub use denoise::{Denoiser, DenoiserKind};
pub use error::{Error, Result};
pub use geometry::{ErpGrid, SphereCoord, TangentCoord, TangentLayout, TangentPlaneSpec};
pub use raster::{ErpImage, Raster, TangentStack};
pub use resample::{Blend, Kernel, Projector, ResampleConfig};
pub use pipeline::{omnissr_run, Pipeline, PipelineConfig, RunReport};
