//! Inputs shared by the benchmarks.

use std::collections::BTreeMap;

use entroseg_core::detection::{DetBox, DetectorDescriptor, DetectorKind};
use entroseg_core::image::RasterImage;
use entroseg_core::synth::{text_scene, SceneParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The 512x512 synthetic text scene the timing budget is stated for.
pub fn scene(seed: u64) -> RasterImage {
    text_scene(&SceneParams::default(), seed).image
}

/// `n` boxes clustered around a handful of centres, so suppression has
/// real overlaps to resolve.
pub fn clustered_boxes(n: usize, model_id: &str, seed: u64) -> Vec<DetBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<(f64, f64)> = (0..n.div_ceil(8).max(1))
        .map(|_| (rng.gen_range(0.0..480.0), rng.gen_range(0.0..480.0)))
        .collect();
    (0..n)
        .map(|i| {
            let (cx, cy) = centres[i % centres.len()];
            let x = cx + rng.gen_range(-6.0..6.0);
            let y = cy + rng.gen_range(-6.0..6.0);
            let w = rng.gen_range(20.0..60.0);
            let h = rng.gen_range(10.0..24.0);
            DetBox::new(x, y, x + w, y + h, rng.gen_range(0.05..1.0), model_id)
        })
        .collect()
}

/// Three detectors of decreasing accuracy with `per_model` boxes each.
pub fn ensemble_input(per_model: usize) -> (BTreeMap<String, Vec<DetBox>>, Vec<DetectorDescriptor>) {
    let models = [("a", 0.9), ("b", 0.7), ("c", 0.5)];
    let boxes = models
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.to_string(), clustered_boxes(per_model, id, 11 + i as u64)))
        .collect();
    let descriptors = models
        .iter()
        .map(|&(id, acc)| DetectorDescriptor::new(id, acc, DetectorKind::External))
        .collect();
    (boxes, descriptors)
}
