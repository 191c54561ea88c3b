//! Self-supervised text-line segmentation of document images.
//!
//! The pipeline: a two-branch patch-similarity network is trained on patch
//! pairs sampled from unlabeled pages; one branch embeds every sliding window
//! of a page into a feature grid; the grid's principal components are rendered
//! as a pseudo-RGB image and thresholded into blob lines; finally every ink
//! component is assigned to a blob line by multi-label graph-cut energy
//! minimization.

pub mod blob_detect;
pub mod doc_io;
pub mod error;
pub mod eval_metrics;
pub mod feature_grid;
pub mod grid;
pub mod line_extract;

pub use error::{Error, Result};
pub mod nn;
pub mod pair_gen;
pub mod pipeline;
