//! Text detection for high-entropy images.
//!
//! The pipeline describes fixed-size super-pixels of the input (or of its
//! dilation) by color and Leung–Malik texture statistics, clusters them with
//! a spatially regularized Gaussian mixture, and runs an ensemble of text detectors on
//! each resulting segment. Detector outputs are fused with selective
//! non-maximal suppression, which favours the most accurate detector.
//!
//! Stages, in order:
//!
//! 1. [`image`]: raster types, dilation and entropy scoring.
//! 2. [`filterbank`]: LM filters and orientation-pooled responses.
//! 3. [`superpixel`]: cell statistics and the similarity graph.
//! 4. [`segmentation`]: mean-field EM, ICM labeling, segment merging.
//! 5. [`detection`]: detectors, NMS and ensemble fusion.
//! 6. [`evaluation`]: ground truth parsing and precision/recall.
//!
//! [`pipeline`] wires the stages together from a [`pipeline::PipelineConfig`];
//! [`synth`] renders test images with known answers.

pub mod detection;
pub mod error;
pub mod evaluation;
pub mod filterbank;
pub mod image;
pub mod pipeline;
pub mod segmentation;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};
