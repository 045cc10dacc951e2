//! JSON documents written by the commands. Field names are the published
//! contract; see `schemas/` at the repository root.

use entroseg_core::detection::{DetBox, Diagnostics};
use entroseg_core::evaluation::Metrics;
use entroseg_core::pipeline::{DetectionOutput, EntropyReport, SegmentationOutput};
use entroseg_core::segmentation::SegmentSummary;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct EntropyDoc {
    pub image: String,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub report: EntropyReport,
}

#[derive(Debug, Serialize)]
pub struct GridDoc {
    pub cell_size: usize,
    pub cols: usize,
    pub rows: usize,
}

#[derive(Debug, Serialize)]
pub struct SegmentDoc {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub k: usize,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub icm_sweeps: usize,
    pub grid: GridDoc,
    /// One label per cell, row-major over the grid.
    pub labels: Vec<usize>,
    pub segments: Vec<SegmentSummary>,
}

impl SegmentDoc {
    pub fn new(image: String, seed: u64, out: &SegmentationOutput) -> Self {
        Self {
            image,
            width: out.grid.width(),
            height: out.grid.height(),
            seed,
            k: out.k,
            em_iterations: out.em_iterations,
            em_converged: out.em_converged,
            icm_sweeps: out.icm_sweeps,
            grid: GridDoc {
                cell_size: out.grid.cell_size(),
                cols: out.grid.cols(),
                rows: out.grid.rows(),
            },
            labels: out.labels.clone(),
            segments: out.segments.summaries(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DetectDoc {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub entropy: EntropyReport,
    /// Crops the detectors ran on.
    pub crops: Vec<SegmentSummary>,
    /// Fused boxes in image coordinates, by probability descending.
    pub detections: Vec<DetBox>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

impl DetectDoc {
    pub fn new(image: String, out: &DetectionOutput) -> Self {
        Self {
            image,
            width: out.segmentation.grid.width(),
            height: out.segmentation.grid.height(),
            entropy: out.entropy,
            crops: out.crops.summaries(),
            detections: out.ensemble.boxes.clone(),
            diagnostics: out.ensemble.diagnostics.clone(),
            metrics: None,
        }
    }
}
