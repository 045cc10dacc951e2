use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::boxes::{iou, DetBox};
use crate::error::{Error, Result};

pub const DEFAULT_P_TH: f64 = 0.9;
pub const DEFAULT_P_TL: f64 = 0.8;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Minimum probability for boxes of the most accurate model.
    pub p_th: f64,
    /// Minimum probability for every other model.
    pub p_tl: f64,
    pub nms_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            p_th: DEFAULT_P_TH,
            p_tl: DEFAULT_P_TL,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_th", self.p_th), ("p_tl", self.p_tl), ("nms_threshold", self.nms_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.p_tl > self.p_th {
            return Err(Error::InvalidConfig(format!(
                "p_tl ({}) must not exceed p_th ({})",
                self.p_tl, self.p_th
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDescriptor {
    pub model_id: String,
    /// Validation F-score of the detector, in `[0, 1]`.
    pub accuracy: f64,
    pub kind: DetectorKind,
}

impl DetectorDescriptor {
    pub fn new(model_id: impl Into<String>, accuracy: f64, kind: DetectorKind) -> Self {
        Self {
            model_id: model_id.into(),
            accuracy,
            kind,
        }
    }
}

fn by_prob_desc(a: &DetBox, b: &DetBox) -> Ordering {
    b.prob.partial_cmp(&a.prob).unwrap_or(Ordering::Equal)
}

/// Greedy scan over boxes already in priority order: each survivor removes
/// every later box overlapping it by more than `threshold`.
fn suppress(sorted: Vec<DetBox>, threshold: f64) -> Vec<DetBox> {
    let mut keep: Vec<DetBox> = Vec::with_capacity(sorted.len());
    let mut alive = vec![true; sorted.len()];
    for i in 0..sorted.len() {
        if !alive[i] {
            continue;
        }
        for j in i + 1..sorted.len() {
            if alive[j] && iou(&sorted[i], &sorted[j]) > threshold {
                alive[j] = false;
            }
        }
    }
    for (b, a) in sorted.into_iter().zip(alive) {
        if a {
            keep.push(b);
        }
    }
    keep
}

/// Non-maximal suppression. Boxes are ordered by probability (descending),
/// then model id, then input position; overlaps strictly above `threshold`
/// are removed.
pub fn nms(boxes: &[DetBox], threshold: f64) -> Vec<DetBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(|a, b| by_prob_desc(a, b).then_with(|| a.model_id.cmp(&b.model_id)));
    suppress(sorted, threshold)
}

/// The most accurate model; equal accuracies go to the smallest id.
pub fn best_model(descriptors: &[DetectorDescriptor]) -> Option<&DetectorDescriptor> {
    descriptors.iter().reduce(|best, d| {
        let better = d.accuracy > best.accuracy || (d.accuracy == best.accuracy && d.model_id < best.model_id);
        if better {
            d
        } else {
            best
        }
    })
}

/// Selective NMS: the best model's confident boxes are promoted to
/// probability 1 and take precedence over every other model.
///
/// Boxes are pooled in model-id order. When a promoted box ties with an
/// other-model box at probability 1, the promoted box is ranked first so it
/// cannot be suppressed by a less accurate model.
pub fn selective_nms(
    boxes_by_model: &BTreeMap<String, Vec<DetBox>>,
    descriptors: &[DetectorDescriptor],
    config: &EnsembleConfig,
) -> Result<Vec<DetBox>> {
    for (id, boxes) in boxes_by_model {
        let known = |m: &str| descriptors.iter().any(|d| d.model_id == m);
        if !known(id) {
            return Err(Error::UnknownModel(id.clone()));
        }
        if let Some(b) = boxes.iter().find(|b| &b.model_id != id && !known(&b.model_id)) {
            return Err(Error::UnknownModel(b.model_id.clone()));
        }
    }
    let Some(best) = best_model(descriptors) else {
        return Ok(Vec::new());
    };

    let mut pool: Vec<(bool, DetBox)> = Vec::new();
    for boxes in boxes_by_model.values() {
        for b in boxes {
            let is_best = b.model_id == best.model_id;
            if is_best && b.prob >= config.p_th {
                pool.push((true, DetBox { prob: 1.0, ..b.clone() }));
            } else if !is_best && b.prob >= config.p_tl {
                pool.push((false, b.clone()));
            }
        }
    }
    pool.sort_by(|(pa, a), (pb, b)| {
        by_prob_desc(a, b)
            .then_with(|| pb.cmp(pa))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    Ok(suppress(pool.into_iter().map(|(_, b)| b).collect(), config.nms_threshold))
}
