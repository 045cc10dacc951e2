//! Detection boxes, NMS fusion, detectors and the per-segment ensemble.

mod boxes;
mod detector;
mod ensemble;
mod nms;
pub mod protocol;
mod reference;

pub use boxes::{iou, to_image_coords, DetBox, Frame};
pub use detector::{ConstantDetector, Detector, ScriptedDetector};
pub use ensemble::{run_ensemble, run_ensemble_with, CropPolicy, Diagnostics, EnsembleMember, EnsembleOutput, TaskFailure};
pub use nms::{
    best_model, nms, selective_nms, DetectorDescriptor, DetectorKind, EnsembleConfig, DEFAULT_NMS_THRESHOLD,
    DEFAULT_P_TH, DEFAULT_P_TL,
};
pub use protocol::ExternalDetector;
pub use reference::{reference_detect, ReferenceDetector, ReferenceParams};
