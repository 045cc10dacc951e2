//! A small classical text detector used as the built-in ensemble member.
//!
//! Dark strokes are found by adaptive thresholding against the local mean,
//! grouped into connected components, and chained horizontally into line
//! candidates. Candidates are scored by how densely they are covered by
//! intensity edges: glyph lines are almost all edge, while flat clutter is
//! edge only along its outline.

use serde::{Deserialize, Serialize};

use super::boxes::DetBox;
use super::detector::Detector;
use crate::error::{Error, Result};
use crate::image::{to_grayscale, GrayImage, RasterImage};

pub const MIN_REGION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceParams {
    /// Side of the local-mean window, in pixels (odd).
    pub window: usize,
    /// A pixel is foreground when darker than the local mean by this much.
    pub offset: f64,
    /// Horizontal merge distance as a fraction of the median component height.
    pub merge_gap: f64,
    /// Components covering fewer pixels are treated as noise.
    pub min_component_area: usize,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub min_height: f64,
    /// Upper bound on candidate height as a fraction of the region height.
    pub max_height_fraction: f64,
    /// Sobel magnitude (in intensity units) above which a pixel is an edge.
    pub edge_threshold: f64,
    /// Edge density that maps to probability 1.
    pub reference_density: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            window: 15,
            offset: 0.05,
            merge_gap: 0.8,
            min_component_area: 4,
            min_aspect: 0.2,
            max_aspect: 20.0,
            min_height: 6.0,
            max_height_fraction: 0.9,
            edge_threshold: 0.2,
            reference_density: 0.4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceDetector {
    pub params: ReferenceParams,
}

impl ReferenceDetector {
    pub fn new(params: ReferenceParams) -> Self {
        Self { params }
    }
}

impl Detector for ReferenceDetector {
    fn detect(&self, region: &RasterImage, _segment: usize) -> Result<Vec<DetBox>> {
        reference_detect(region, &self.params)
    }
}

/// Half-open pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bounds {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Bounds {
    fn width(&self) -> usize {
        self.x1 - self.x0
    }

    fn height(&self) -> usize {
        self.y1 - self.y0
    }

    fn union(&self, o: &Bounds) -> Bounds {
        Bounds {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += value(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn sum(&self, b: Bounds) -> f64 {
        let s = self.stride;
        self.sums[b.y1 * s + b.x1] - self.sums[b.y0 * s + b.x1] - self.sums[b.y1 * s + b.x0] + self.sums[b.y0 * s + b.x0]
    }
}

fn binarize(gray: &GrayImage, window: usize, offset: f64) -> Vec<bool> {
    let (w, h) = (gray.width(), gray.height());
    let integral = Integral::new(w, h, |x, y| gray.get(x, y));
    let half = window / 2;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let b = Bounds {
                x0: x.saturating_sub(half),
                y0: y.saturating_sub(half),
                x1: (x + half + 1).min(w),
                y1: (y + half + 1).min(h),
            };
            let mean = integral.sum(b) / (b.width() * b.height()) as f64;
            out[y * w + x] = gray.get(x, y) < mean - offset;
        }
    }
    out
}

/// 8-connected components as (bounds, pixel count), in raster order of
/// their first pixel.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<(Bounds, usize)> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (sx, sy) = (start % w, start / w);
        let mut b = Bounds { x0: sx, y0: sy, x1: sx + 1, y1: sy + 1 };
        let mut count = 0;
        while let Some(p) = stack.pop() {
            count += 1;
            let (x, y) = (p % w, p / w);
            b = b.union(&Bounds { x0: x, y0: y, x1: x + 1, y1: y + 1 });
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let q = ny * w + nx;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.push((b, count));
    }
    out
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Repeatedly joins boxes that share at least half of the smaller height
/// and are separated horizontally by less than `max_gap`.
fn chain_horizontally(mut boxes: Vec<Bounds>, max_gap: f64) -> Vec<Bounds> {
    loop {
        boxes.sort_by_key(|b| (b.x0, b.y0, b.x1, b.y1));
        let mut merged = false;
        let mut i = 0;
        while i < boxes.len() {
            let mut j = i + 1;
            while j < boxes.len() {
                let (a, b) = (boxes[i], boxes[j]);
                let overlap = a.y1.min(b.y1) as f64 - a.y0.max(b.y0) as f64;
                let gap = b.x0 as f64 - a.x1 as f64;
                if overlap >= 0.5 * a.height().min(b.height()) as f64 && gap < max_gap {
                    boxes[i] = a.union(&b);
                    boxes.remove(j);
                    merged = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged {
            return boxes;
        }
    }
}

fn edge_map(gray: &GrayImage, threshold: f64) -> Vec<bool> {
    let (w, h) = (gray.width(), gray.height());
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| gray.get_clamped(x + dx, y + dy);
            let gx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
            let gy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
            // A unit step produces |g| = 4.
            out[y as usize * w + x as usize] = gx.hypot(gy) / 4.0 > threshold;
        }
    }
    out
}

/// Runs the reference detector on one region. Boxes are region-local.
pub fn reference_detect(region: &RasterImage, params: &ReferenceParams) -> Result<Vec<DetBox>> {
    let (w, h) = (region.width(), region.height());
    if w < MIN_REGION || h < MIN_REGION {
        return Err(Error::RegionTooSmall { width: w, height: h });
    }
    if params.window == 0 || params.reference_density <= 0.0 {
        return Err(Error::InvalidConfig("reference detector window and density must be positive".into()));
    }
    let gray = to_grayscale(region)?;
    let mask = binarize(&gray, params.window, params.offset);
    let comps: Vec<Bounds> = components(&mask, w, h)
        .into_iter()
        .filter(|(_, n)| *n >= params.min_component_area)
        .map(|(b, _)| b)
        .collect();
    if comps.is_empty() {
        return Ok(Vec::new());
    }
    let mut heights: Vec<usize> = comps.iter().map(Bounds::height).collect();
    let max_gap = params.merge_gap * median(&mut heights);
    let lines = chain_horizontally(comps, max_gap);

    let edges = edge_map(&gray, params.edge_threshold);
    let edge_sum = Integral::new(w, h, |x, y| if edges[y * w + x] { 1.0 } else { 0.0 });
    let max_height = params.max_height_fraction * h as f64;
    let mut out = Vec::new();
    for b in lines {
        let (bw, bh) = (b.width() as f64, b.height() as f64);
        let aspect = bw / bh;
        if aspect < params.min_aspect || aspect > params.max_aspect || bh < params.min_height || bh > max_height {
            continue;
        }
        let density = edge_sum.sum(b) / (bw * bh);
        let prob = (density / params.reference_density).clamp(0.0, 1.0);
        out.push(DetBox::new(b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64, prob, "").in_segment());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::iou;

    fn field(w: usize, h: usize) -> RasterImage {
        RasterImage::filled(w, h, 1, 1.0).unwrap()
    }

    fn fill(img: &mut RasterImage, x0: usize, y0: usize, x1: usize, y1: usize, v: f64) {
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(x, y, 0, v);
            }
        }
    }

    #[test]
    fn blank_region_has_no_boxes() {
        assert!(reference_detect(&field(64, 64), &ReferenceParams::default()).unwrap().is_empty());
    }

    #[test]
    fn tiny_region_is_rejected() {
        assert!(matches!(
            reference_detect(&field(7, 40), &ReferenceParams::default()),
            Err(Error::RegionTooSmall { .. })
        ));
    }

    #[test]
    fn solid_bar_gives_one_tight_box() {
        let mut img = field(100, 100);
        fill(&mut img, 35, 45, 65, 55, 0.0);
        let boxes = reference_detect(&img, &ReferenceParams::default()).unwrap();
        assert_eq!(boxes.len(), 1, "{boxes:?}");
        let b = &boxes[0];
        for (got, want) in [(b.x1, 35.0), (b.y1, 45.0), (b.x2, 65.0), (b.y2, 55.0)] {
            assert!((got - want).abs() <= 2.0, "{b:?}");
        }
        assert!(b.prob > 0.0 && b.prob <= 1.0);
    }

    #[test]
    fn separated_glyphs_chain_into_a_line() {
        // Five 6x12 blocks with 4 px gaps: gap < 0.8 * 12.
        let mut img = field(120, 60);
        for i in 0..5 {
            let x = 20 + i * 10;
            fill(&mut img, x, 20, x + 6, 32, 0.0);
        }
        let boxes = reference_detect(&img, &ReferenceParams::default()).unwrap();
        assert_eq!(boxes.len(), 1, "{boxes:?}");
        let truth = DetBox::new(20.0, 20.0, 66.0, 32.0, 1.0, "");
        assert!(iou(&boxes[0], &truth) > 0.9);
    }

    #[test]
    fn wide_gaps_are_not_chained() {
        let mut img = field(160, 60);
        fill(&mut img, 20, 20, 50, 32, 0.0);
        fill(&mut img, 90, 20, 120, 32, 0.0);
        assert_eq!(reference_detect(&img, &ReferenceParams::default()).unwrap().len(), 2);
    }

    #[test]
    fn shape_filters_apply() {
        // Too short.
        let mut img = field(100, 100);
        fill(&mut img, 20, 40, 60, 44, 0.0);
        assert!(reference_detect(&img, &ReferenceParams::default()).unwrap().is_empty());
        // Too tall for its width (aspect 0.1).
        let mut img = field(100, 100);
        fill(&mut img, 40, 10, 44, 50, 0.0);
        assert!(reference_detect(&img, &ReferenceParams::default()).unwrap().is_empty());
    }

    #[test]
    fn flat_blob_scores_below_glyphs() {
        let mut img = field(200, 100);
        fill(&mut img, 10, 10, 90, 70, 0.3);
        for i in 0..6 {
            let x = 110 + i * 12;
            fill(&mut img, x, 40, x + 3, 56, 0.0);
            fill(&mut img, x, 40, x + 8, 43, 0.0);
            fill(&mut img, x, 53, x + 8, 56, 0.0);
        }
        let boxes = reference_detect(&img, &ReferenceParams::default()).unwrap();
        let blob = boxes.iter().find(|b| b.x1 < 50.0).expect("blob candidate");
        let line = boxes.iter().find(|b| b.x1 >= 100.0).expect("line candidate");
        assert!(line.prob > 0.9, "{line:?}");
        assert!(blob.prob < line.prob * 0.5, "{blob:?}");
    }

    #[test]
    fn deterministic() {
        let mut img = field(80, 80);
        fill(&mut img, 10, 10, 40, 22, 0.1);
        let p = ReferenceParams::default();
        assert_eq!(reference_detect(&img, &p).unwrap(), reference_detect(&img, &p).unwrap());
    }
}
