//! Geometric and numerical core of an image-matching front-end for
//! structure-from-motion.
//!
//! The stages mirror a retrieve → extract → match → integrate pipeline:
//!
//! - [`retrieval`]: shortlist candidate image pairs from global descriptors.
//! - [`feature_head`]: decode detector/descriptor head outputs into keypoints
//!   and unit-norm local descriptors.
//! - [`matching`]: mutual nearest-neighbour candidate matches.
//! - [`adalam`]: spatially adaptive outlier filtering.
//! - [`ensemble`]: merge keypoints and matches from several sources.
//! - [`losses`]: hard-negative margin losses used to train descriptors.
//! - [`io`]: tensor files, match archives and the pairwise text export.
//! - [`synth`]: synthetic scenes with ground truth for evaluation.

pub mod adalam;
pub mod ensemble;
pub mod error;
pub mod feature_head;
mod grid;
pub mod io;
pub mod losses;
pub mod matching;
pub mod par;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
