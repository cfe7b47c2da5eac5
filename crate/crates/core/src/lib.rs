//! Part-based multi-stream embedding model for vehicle search.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`dataset`]: hierarchically labelled images (model id, identity id), from a
//!    synthetic generator with planted cues or from a CSV manifest.
//! 2. [`features`] + [`mining`]: HOG patch descriptors, discriminative score maps over
//!    KNN neighbourhoods, and the two canonical part rectangles (`part_m`, `part_i`).
//! 3. [`embedding`] + [`loss`] + [`trainer`]: three unshared CNN streams (whole image,
//!    model part, identity part) fused into one embedding and trained with a triplet loss.
//! 4. [`eval`]: probe/gallery ranking with mAP (retrieval) and CMC (re-identification).

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod image;
pub mod loss;
pub mod mining;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
