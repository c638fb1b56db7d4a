//! CPU differentiable 3D Gaussian splatting with selective densification,
//! dominant-Gaussian pruning and sparse spherical-harmonics order growth.

pub mod camera;
pub mod densify;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod metrics;
pub mod prune;
pub mod raster;
pub mod remap;
pub mod sh;
pub mod sh_schedule;
pub mod train;

pub use camera::{CameraView, Intrinsics};
pub use error::{Error, Result};
pub use gaussian::{GaussianPrimitive, ProjectedGaussian};
pub use image::Image;
pub use raster::{render_backward, render_forward, GradientBuffers, RenderOutput, RenderSettings};
