//! Detection of unseen industrial parts in bin-picking scenes from CAD
//! models alone: low-light gating, ROI background removal, grid-prompted
//! mask proposals and template matching, plus BOP-style evaluation.

pub mod backends;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod preprocess;
pub mod proposals;
pub mod roi;
pub mod synthetic;
