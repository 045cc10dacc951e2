use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::superpixel::{PixelRect, SuperPixelGrid};

/// A connected set of same-label cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: usize,
    /// Member cell ids, ascending.
    pub cells: Vec<usize>,
    /// Union of the member cells' pixel extents, padded and clipped.
    pub bbox: PixelRect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    pub width: usize,
    pub height: usize,
    pub padding: usize,
}

/// JSON form of a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub label: usize,
    pub cell_count: usize,
    /// `[x1, y1, x2, y2]`, half-open pixel bounds.
    pub bbox: [usize; 4],
}

impl SegmentSet {
    /// A single segment covering the whole image, with no member cells.
    pub fn whole_image(width: usize, height: usize) -> Self {
        Self {
            segments: vec![Segment {
                label: 0,
                cells: Vec::new(),
                bbox: PixelRect {
                    x0: 0,
                    y0: 0,
                    x1: width,
                    y1: height,
                },
            }],
            width,
            height,
            padding: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn summaries(&self) -> Vec<SegmentSummary> {
        self.segments
            .iter()
            .map(|s| SegmentSummary {
                label: s.label,
                cell_count: s.cells.len(),
                bbox: [s.bbox.x0, s.bbox.y0, s.bbox.x1, s.bbox.y1],
            })
            .collect()
    }

    /// Segment index of every cell.
    pub fn cell_segments(&self, cells: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cells];
        for (i, seg) in self.segments.iter().enumerate() {
            for &c in &seg.cells {
                out[c] = Some(i);
            }
        }
        out
    }
}

/// Connected components of equal labels under 4-connectivity, in raster
/// order of their first cell.
pub fn merge_segments(labels: &[usize], grid: &SuperPixelGrid, padding: usize) -> SegmentSet {
    assert_eq!(labels.len(), grid.len(), "labels must cover the grid");
    let mut seen = vec![false; grid.len()];
    let mut segments = Vec::new();
    for start in 0..grid.len() {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(cell) = queue.pop_front() {
            cells.push(cell);
            let (r, c) = grid.position(cell);
            let mut visit = |nr: usize, nc: usize| {
                let n = grid.cell_at(nr, nc);
                if !seen[n] && labels[n] == label {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < grid.rows() {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < grid.cols() {
                visit(r, c + 1);
            }
        }
        cells.sort_unstable();
        let mut bbox = grid.rect(cells[0]);
        for &cell in &cells[1..] {
            let r = grid.rect(cell);
            bbox.x0 = bbox.x0.min(r.x0);
            bbox.y0 = bbox.y0.min(r.y0);
            bbox.x1 = bbox.x1.max(r.x1);
            bbox.y1 = bbox.y1.max(r.y1);
        }
        bbox.x0 = bbox.x0.saturating_sub(padding);
        bbox.y0 = bbox.y0.saturating_sub(padding);
        bbox.x1 = (bbox.x1 + padding).min(grid.width());
        bbox.y1 = (bbox.y1 + padding).min(grid.height());
        segments.push(Segment { label, cells, bbox });
    }
    SegmentSet {
        segments,
        width: grid.width(),
        height: grid.height(),
        padding,
    }
}
