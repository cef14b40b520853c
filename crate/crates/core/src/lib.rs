//! Zero-shot point cloud segmentation by transferring a frozen image
//! teacher's class-aligned features into a point encoder.
//!
//! The crate is organized bottom-up:
//!
//! - [`ndiff`]: dense arrays and a reverse-mode tape with a gradient checker.
//! - [`geometry`]: pinhole projection, feature rasterization, patch pooling.
//! - [`data`]: class catalogs, embedding tables, synthetic paired scenes and
//!   the on-disk formats.
//! - [`model`]: point encoder, frozen teacher, embedding-weighted heads.
//! - [`align`]: contrastive alignment losses, pseudo labels, segmentation losses.
//! - [`train`]: optimizer, two-phase training, metrics.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod ndiff;
pub mod parallel;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
