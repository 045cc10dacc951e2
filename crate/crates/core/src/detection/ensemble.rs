use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::boxes::{to_image_coords, DetBox, Frame};
use super::detector::Detector;
use super::nms::{selective_nms, DetectorDescriptor, EnsembleConfig};
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::segmentation::SegmentSet;
use crate::superpixel::PixelRect;

#[derive(Clone)]
pub struct EnsembleMember {
    pub detector: Arc<dyn Detector>,
    pub descriptor: DetectorDescriptor,
}

impl EnsembleMember {
    pub fn new(detector: Arc<dyn Detector>, descriptor: DetectorDescriptor) -> Self {
        Self { detector, descriptor }
    }
}

impl std::fmt::Debug for EnsembleMember {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnsembleMember").field("descriptor", &self.descriptor).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFailure {
    pub model_id: String,
    pub segment: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Number of (detector, segment) tasks run.
    pub tasks: usize,
    pub failures: Vec<TaskFailure>,
    /// Boxes returned by all detectors before fusion.
    pub raw_boxes: usize,
    /// Boxes that had to be clipped to the image.
    pub clipped_boxes: usize,
    /// Boxes dropped for touching a crop edge inside the image.
    pub truncated_boxes: usize,
    /// Whether the whole image stood in for an empty segment set.
    pub used_fallback: bool,
}

impl Diagnostics {
    /// Every task of `model_id` failed.
    pub fn model_failed(&self, model_id: &str, segments: usize) -> bool {
        self.failures.iter().filter(|f| f.model_id == model_id).count() == segments
    }

    pub fn all_failed(&self) -> bool {
        self.tasks > 0 && self.failures.len() == self.tasks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    /// Fused image-frame boxes, by probability descending.
    pub boxes: Vec<DetBox>,
    pub diagnostics: Diagnostics,
}

/// What to do with detections cut off by a segment crop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CropPolicy {
    /// Drop boxes reaching within `truncation_margin` px of a crop edge that
    /// lies inside the image: such a box is usually a fragment of text the
    /// segmentation sliced through, while the full text is found in a crop
    /// that contains it. Crop edges on the image border never truncate.
    pub drop_truncated: bool,
    pub truncation_margin: f64,
}

impl CropPolicy {
    pub const DEFAULT_MARGIN: f64 = 1.0;

    pub fn drop_truncated() -> Self {
        Self {
            drop_truncated: true,
            truncation_margin: Self::DEFAULT_MARGIN,
        }
    }

    fn truncates(&self, b: &DetBox, rect: PixelRect, width: usize, height: usize) -> bool {
        if !self.drop_truncated {
            return false;
        }
        let m = self.truncation_margin;
        let (w, h) = (rect.width() as f64, rect.height() as f64);
        (rect.x0 > 0 && b.x1 <= m)
            || (rect.y0 > 0 && b.y1 <= m)
            || (rect.x1 < width && b.x2 >= w - m)
            || (rect.y1 < height && b.y2 >= h - m)
    }
}

struct TaskOutput {
    boxes: Vec<DetBox>,
    clipped: usize,
    truncated: usize,
}

type TaskResult = std::result::Result<TaskOutput, String>;

fn run_task(img: &RasterImage, rect: PixelRect, segment: usize, member: &EnsembleMember, policy: &CropPolicy) -> TaskResult {
    let crop = img.crop(rect.x0, rect.y0, rect.x1, rect.y1).map_err(|e| e.to_string())?;
    let local = member.detector.detect(&crop, segment).map_err(|e| e.to_string())?;
    let bounds = (img.width() as f64, img.height() as f64);
    let origin = (rect.x0 as f64, rect.y0 as f64);
    let mut out = TaskOutput {
        boxes: Vec::with_capacity(local.len()),
        clipped: 0,
        truncated: 0,
    };
    for mut b in local {
        if !b.is_valid() {
            return Err(format!("invalid box {b:?}"));
        }
        if policy.truncates(&b, rect, img.width(), img.height()) {
            out.truncated += 1;
            continue;
        }
        b.model_id.clone_from(&member.descriptor.model_id);
        b.frame = Frame::Segment;
        let (mapped, was_clipped) = to_image_coords(&b, origin, bounds);
        out.clipped += usize::from(was_clipped);
        out.boxes.push(mapped);
    }
    Ok(out)
}

/// Runs every detector on every segment crop and fuses the results with
/// selective NMS.
///
/// Concurrent detectors run in parallel across segments; serial ones are run
/// one region at a time. Results are gathered in (member, segment) order, so
/// the output does not depend on scheduling. A failing task contributes no
/// boxes and is recorded in the diagnostics.
pub fn run_ensemble(
    img: &RasterImage,
    segments: &SegmentSet,
    members: &[EnsembleMember],
    config: &EnsembleConfig,
) -> Result<EnsembleOutput> {
    run_ensemble_with(img, segments, members, config, &CropPolicy::default())
}

/// [`run_ensemble`] with control over boxes cut off by crop edges.
pub fn run_ensemble_with(
    img: &RasterImage,
    segments: &SegmentSet,
    members: &[EnsembleMember],
    config: &EnsembleConfig,
    policy: &CropPolicy,
) -> Result<EnsembleOutput> {
    if members.is_empty() {
        return Err(Error::InvalidConfig("the ensemble needs at least one detector".into()));
    }
    config.validate()?;
    let mut ids: Vec<&str> = members.iter().map(|m| m.descriptor.model_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(format!("model id {:?} registered twice", w[0])));
    }

    let fallback;
    let used_fallback = segments.is_empty();
    let segments = if used_fallback {
        fallback = SegmentSet::whole_image(img.width(), img.height());
        &fallback
    } else {
        segments
    };
    let rects: Vec<PixelRect> = segments.segments.iter().map(|s| s.bbox).collect();

    let mut results: Vec<Vec<TaskResult>> = Vec::with_capacity(members.len());
    for member in members {
        let per_segment = if member.detector.is_concurrent() {
            rects
                .par_iter()
                .enumerate()
                .map(|(i, r)| run_task(img, *r, i, member, policy))
                .collect()
        } else {
            rects.iter().enumerate().map(|(i, r)| run_task(img, *r, i, member, policy)).collect()
        };
        results.push(per_segment);
    }

    let mut diagnostics = Diagnostics {
        tasks: members.len() * rects.len(),
        used_fallback,
        ..Default::default()
    };
    let mut by_model: BTreeMap<String, Vec<DetBox>> = BTreeMap::new();
    for (member, per_segment) in members.iter().zip(results) {
        let pool = by_model.entry(member.descriptor.model_id.clone()).or_default();
        for (segment, result) in per_segment.into_iter().enumerate() {
            match result {
                Ok(task) => {
                    diagnostics.raw_boxes += task.boxes.len() + task.truncated;
                    diagnostics.clipped_boxes += task.clipped;
                    diagnostics.truncated_boxes += task.truncated;
                    pool.extend(task.boxes);
                }
                Err(reason) => {
                    log::warn!("detector {} failed on segment {segment}: {reason}", member.descriptor.model_id);
                    diagnostics.failures.push(TaskFailure {
                        model_id: member.descriptor.model_id.clone(),
                        segment,
                        reason,
                    });
                }
            }
        }
    }

    let descriptors: Vec<DetectorDescriptor> = members.iter().map(|m| m.descriptor.clone()).collect();
    let boxes = selective_nms(&by_model, &descriptors, config)?;
    Ok(EnsembleOutput { boxes, diagnostics })
}
