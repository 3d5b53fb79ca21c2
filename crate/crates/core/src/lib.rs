//! Hierarchical dual-branch geometry transformer at desk scale.
//!
//! A coarse global-attention stack reasons over low-resolution views, a
//! guidance-based feature upsampler lifts its features to high resolution,
//! and a shallow windowed refiner regresses depth and pose. A training-free
//! modulation stage finds view-inconsistent tokens from cross-view Gramian
//! statistics and gates their keys in the early layers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod imageio;
pub mod modulation;
pub mod tensor;
pub mod transformer;
pub mod upsampler;

pub use error::{Error, Result};
