//! Dynamic-graph post-processing of labeled bone point clouds.
//!
//! The crate covers the whole pipeline:
//!
//! - [`phantom`]: synthetic knee-like scans with ground-truth artifact flags,
//!   the frame → world transform chain and all file formats.
//! - [`sampling`]: minority-class augmentation, Monte Carlo batch sampling
//!   with replacement, normalization and the minimum-class guarantee.
//! - [`graph`]: exact k-nearest-neighbor graphs in coordinate or feature space.
//! - [`model`]: an EdgeConv network with hand-written backpropagation, Adam,
//!   early stopping and classification metrics.
//! - [`filter`]: the mixed-neighborhood elimination rule and cross-batch
//!   vote aggregation.
//! - [`invert`]: mapping verdicts back to 2D frames and frame-level precision.

pub mod error;
pub mod filter;
pub mod graph;
pub mod invert;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
