//! Feed-forward multi-view Gaussian splat reconstruction.
//!
//! The pipeline runs per input view:
//!
//! 1. [`features`] computes quarter-resolution matching features.
//! 2. [`cost_volume`] plane-sweeps nearby views into a cosine cost volume,
//!    refines it and regresses depth with a soft-argmax.
//! 3. [`triplets`] unprojects the depth map into pixel-aligned Gaussian
//!    triplets (center, weight, latent feature).
//! 4. [`ptf`] fuses each view's triplets into a global set by pixel-wise
//!    alignment, merging redundant triplets.
//!
//! The global set is decoded into renderable primitives by [`decode`] and
//! drawn by the tile rasterizer in [`render`]. [`synthetic`] produces
//! procedural scenes with exact ground truth, [`io`] handles datasets,
//! PLY files, weights and configuration, and [`pipeline`] wires it all
//! together.

pub mod camera;
pub mod cost_volume;
pub mod decode;
pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod ptf;
pub mod render;
pub mod synthetic;
pub mod triplets;

pub use error::{Error, Result};
