//! Grasp generation for single-view scene point clouds.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: nearest neighbours, Chamfer distance, planes, rigid
//!   transforms and point-in-mesh tests.
//! - [`hand`]: a procedural articulated hand with a 61-dimensional parameter
//!   vector (shape, per-joint pose, wrist rotation and translation) and
//!   analytic skinning Jacobians.
//! - [`scene`]: synthetic tabletop scenes, camera rings, depth rendering,
//!   backprojection and grasp annotation filtering.
//! - [`diffusion`]: parameter normalization, forward noising and the DDIM
//!   reverse sampler.
//! - [`nn`]: a small reverse-mode autodiff tape plus the point encoder,
//!   completion and category heads, and the conditional denoiser.
//! - [`losses`]: perception and grasp training objectives.
//! - [`metrics`]: penetration, displacement, contact and diversity metrics.
//! - [`formats`] and [`commands`]: file formats and the end-to-end pipelines
//!   behind the `s2h` binary.

pub mod commands;
pub mod diffusion;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod hand;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod toy;

pub use error::{Error, Result};
