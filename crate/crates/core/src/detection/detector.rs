use std::collections::BTreeMap;

use super::boxes::DetBox;
use crate::error::Result;
use crate::image::RasterImage;

/// A text detector that can join the ensemble.
///
/// `detect` returns boxes in region-local coordinates. The orchestrator
/// overwrites `model_id` with the id of the descriptor the detector was
/// registered under, so implementations may leave it empty.
pub trait Detector: Send + Sync {
    /// `segment` is the index of the segment the region was cropped from.
    fn detect(&self, region: &RasterImage, segment: usize) -> Result<Vec<DetBox>>;

    /// Whether distinct regions may be processed concurrently. Serial
    /// detectors are queued by the orchestrator.
    fn is_concurrent(&self) -> bool {
        true
    }
}

/// Returns fixed boxes per segment index; segments without a script get
/// nothing. Handy as an in-process stand-in for an external model.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    script: BTreeMap<usize, Vec<DetBox>>,
}

impl ScriptedDetector {
    pub fn new(script: BTreeMap<usize, Vec<DetBox>>) -> Self {
        Self { script }
    }

    /// The same boxes for every segment.
    pub fn constant(boxes: Vec<DetBox>) -> ConstantDetector {
        ConstantDetector { boxes }
    }
}

impl Detector for ScriptedDetector {
    fn detect(&self, _region: &RasterImage, segment: usize) -> Result<Vec<DetBox>> {
        Ok(self
            .script
            .get(&segment)
            .map(|b| b.iter().cloned().map(DetBox::in_segment).collect())
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConstantDetector {
    boxes: Vec<DetBox>,
}

impl Detector for ConstantDetector {
    fn detect(&self, _region: &RasterImage, _segment: usize) -> Result<Vec<DetBox>> {
        Ok(self.boxes.iter().cloned().map(DetBox::in_segment).collect())
    }
}
