//! Lens degradation with a learned, spatially-variant and depth-dependent PSF.
//!
//! The pipeline runs from PSF samples (measured scans or the analytic
//! [`lens`]) through [`dataset`] preprocessing into a neural [`regressor`]
//! mapping a field point `(Δz, R, φ)` to a kernel; [`depth`] turns scene depth
//! into per-pixel defocus and [`convolve`] applies the resulting kernels to
//! images with a blockwise bilinear scheme.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. Files are always stored as `f64`.

// `!(x > y)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convolve;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod imageio;
pub mod kernel;
pub mod lens;
pub mod model;
pub mod regressor;
pub mod scalar;
pub mod scenes;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use kernel::{
    bin_downsample, crop_centered, interpolate_kernels, normalize, FieldPoint, HighResScan,
    PsfKernel,
};
pub use model::PsfModel;

pub type Kernel = kernel::PsfKernel<f64>;
pub type Kernel32 = kernel::PsfKernel<f32>;
pub type Field = kernel::FieldPoint<f64>;
pub type Field32 = kernel::FieldPoint<f32>;
pub type Scan = kernel::HighResScan<f64>;
pub type Dataset = dataset::PsfDataset<f64>;
pub type Model = regressor::RegressorModel<f64>;
pub type Model32 = regressor::RegressorModel<f32>;
pub type Img = image::Image<f64>;
pub type Img32 = image::Image<f32>;
pub type Defocus = depth::DefocusMap<f64>;
pub type Depth = depth::DepthMap<f64>;
pub type Grid = convolve::KernelGrid<f64>;
pub type Geometry = convolve::SensorGeometry<f64>;
