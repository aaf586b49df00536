//! Retrieval engine and evaluation harness for localizing orbital
//! photographs against a tiled satellite-image database.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`geodesy`]: visibility distance, Web Mercator tiling, region squares,
//!   footprint overlap, region relations.
//! - [`database`]: worldwide region enumeration, year quadruplets, query
//!   catalogs, tile fetching, evaluation-set construction.
//! - [`features`]: deterministic baseline embedding extractor plus the
//!   binary feature store.
//! - [`training`]: neutral-aware multi-similarity loss kernels with analytic
//!   gradients, k-means clustered batch mining, year-wise augmentation, and
//!   a trainable linear head.
//! - [`index`]: immutable 4x90-degree test-time-augmented vector index with
//!   exact kNN search and persistence.
//! - [`eval`]: Recall@N scoring under the non-zero-overlap criterion, naive
//!   baselines, binned diagnostics, and report rendering.
//! - [`synthetic`]: procedural desk-scale worlds used by the test harness
//!   and the CLI.

pub mod database;
pub mod error;
pub mod eval;
pub mod features;
pub mod geodesy;
pub mod index;
pub mod raster;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
