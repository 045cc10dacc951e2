use serde::{Deserialize, Serialize};

/// Coordinate frame of a [`DetBox`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Frame {
    #[default]
    Image,
    /// Local to a segment crop.
    Segment,
}

/// Scored, model-attributed axis-aligned rectangle. Coordinates are
/// continuous pixel bounds: a box covering pixel columns `0..10` spans
/// `x1 = 0, x2 = 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub prob: f64,
    pub model_id: String,
    #[serde(skip)]
    pub frame: Frame,
}

impl DetBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, prob: f64, model_id: impl Into<String>) -> Self {
        Self {
            x1,
            y1,
            x2,
            y2,
            prob,
            model_id: model_id.into(),
            frame: Frame::Image,
        }
    }

    pub fn in_segment(mut self) -> Self {
        self.frame = Frame::Segment;
        self
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Ordered corners and a probability in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        finite && self.x1 <= self.x2 && self.y1 <= self.y2 && (0.0..=1.0).contains(&self.prob)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &DetBox, b: &DetBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Translates a segment-local box by `origin` into the image frame and
/// clips it to `[0, width] x [0, height]`. The flag reports clipping.
pub fn to_image_coords(b: &DetBox, origin: (f64, f64), bounds: (f64, f64)) -> (DetBox, bool) {
    let (ox, oy) = origin;
    let (w, h) = bounds;
    let raw = [b.x1 + ox, b.y1 + oy, b.x2 + ox, b.y2 + oy];
    let clipped = [
        raw[0].clamp(0.0, w),
        raw[1].clamp(0.0, h),
        raw[2].clamp(0.0, w),
        raw[3].clamp(0.0, h),
    ];
    let out = DetBox {
        x1: clipped[0],
        y1: clipped[1],
        x2: clipped[2],
        y2: clipped[3],
        prob: b.prob,
        model_id: b.model_id.clone(),
        frame: Frame::Image,
    };
    (out, raw != clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> DetBox {
        DetBox::new(x1, y1, x2, y2, 0.5, "m")
    }

    #[test]
    fn iou_closed_forms() {
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(0.0, 0.0, 10.0, 10.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(20.0, 0.0, 30.0, 10.0)), 0.0);
        let third = iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 15.0, 10.0));
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_area_iou_is_zero() {
        assert_eq!(iou(&b(3.0, 3.0, 3.0, 3.0), &b(3.0, 3.0, 3.0, 3.0)), 0.0);
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 0.0), &b(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn translation_examples() {
        let local = b(1.0, 2.0, 3.0, 4.0).in_segment();
        let (same, clipped) = to_image_coords(&local, (0.0, 0.0), (100.0, 100.0));
        assert_eq!((same.x1, same.y1, same.x2, same.y2), (1.0, 2.0, 3.0, 4.0));
        assert!(!clipped);
        assert_eq!(same.frame, Frame::Image);

        let (moved, _) = to_image_coords(&local, (10.0, 20.0), (100.0, 100.0));
        assert_eq!((moved.x1, moved.y1, moved.x2, moved.y2), (11.0, 22.0, 13.0, 24.0));
        let back = (moved.x1 - 10.0, moved.y1 - 20.0, moved.x2 - 10.0, moved.y2 - 20.0);
        assert_eq!(back, (1.0, 2.0, 3.0, 4.0));
        assert_eq!(moved.prob, local.prob);
        assert_eq!(moved.model_id, local.model_id);
    }

    #[test]
    fn translation_clips_to_image() {
        let (out, clipped) = to_image_coords(&b(5.0, 5.0, 30.0, 12.0), (80.0, 0.0), (100.0, 50.0));
        assert!(clipped);
        assert_eq!(out.x2, 100.0);
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_value(DetBox::new(1.0, 2.0, 3.0, 4.0, 0.5, "tb")).unwrap();
        assert_eq!(json, serde_json::json!({"x1": 1.0, "y1": 2.0, "x2": 3.0, "y2": 4.0, "prob": 0.5, "model_id": "tb"}));
    }
}
