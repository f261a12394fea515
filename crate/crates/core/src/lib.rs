//! Desk-scale laboratory for block tiling on GPU-style devices.
//!
//! * [`device_model`]: device profiles, occupancy, and the core-count sensitivity figure.
//! * [`interp`]: scalar bilinear interpolation and the reference resize.
//! * [`tiling`]: grid decomposition, launch validation and the parallel tiled executor.
//! * [`cost_model`]: analytic predicted time per tile and tile ranking.
//! * [`bench`]: timing protocol, autotuning and report output.
//! * [`pnm`] and [`cli`]: binary PGM/PPM codecs and the command-line surface.
//!
//! The numeric kernels are generic over [`Real`] (`f32`/`f64`); the aliases
//! below pin the `f64` instantiation the rest of the crate uses by default.

pub mod bench;
pub mod cli;
pub mod cost_model;
pub mod device_model;
pub mod image;
pub mod interp;
pub mod pnm;
pub mod scalar;
pub mod tiling;

pub use device_model::{DeviceProfile, KernelResources, LimitingFactor, OccupancyReport};
pub use image::ImageBuffer;
pub use scalar::Real;
pub use tiling::{LaunchConfig, TileDims};

/// Exact occupancy fraction (active warps over the per-SM warp capacity).
pub type OccupancyRatio = num_rational::Ratio<u32>;

pub type SourceCoord = interp::SourceCoord<f64>;
pub type SourceCoordF32 = interp::SourceCoord<f32>;
pub type NeighborSet = interp::NeighborSet<f64>;
pub type NeighborSetF32 = interp::NeighborSet<f32>;
pub type CostParams = cost_model::CostParams<f64>;
pub type CostParamsF32 = cost_model::CostParams<f32>;
pub type CostBreakdown = cost_model::CostBreakdown<f64>;
pub type CostBreakdownF32 = cost_model::CostBreakdown<f32>;
