//! Emerging-concept detection over time-partitioned embedding point clouds.
//!
//! Points carrying a period index and low-dimensional coordinates are binned
//! into per-period density grids. Each period under scrutiny is compared with
//! the per-bin maximum of the grids that precede it; the mass-normalised,
//! zero-clamped difference highlights density that did not exist before.
//! Scale-normalised Laplacian-of-Gaussian blob detection finds the new dense
//! regions, and blobs close in space across consecutive window offsets are
//! linked into concept tracks.
//!
//! Stages:
//!
//! - [`ingest`]: point files, period partitioning, global extent, PCA fallback.
//! - [`heatmap`]: histogram grids, reference maxima, difference grids, `HMAP` files.
//! - [`blob`]: Gaussian kernels, scale-space stacks, thresholded peak extraction.
//! - [`link`]: temporal linking of blobs into [`link::ConceptTrack`]s.
//! - [`assign`]: point membership, size series, group salience.
//! - [`eval`]: synthetic injection harness with precision/recall scoring.
//! - [`pipeline`]: end-to-end orchestration and on-disk artifacts.

pub mod assign;
pub mod blob;
pub mod config;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod ingest;
pub mod link;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};
