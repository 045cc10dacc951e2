//! Fixed-size super-pixel grid, per-cell color and texture statistics, and
//! the weighted neighbor graph used as the spatial prior.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::ResponseStack;
use crate::image::RasterImage;

pub const DEFAULT_CELL_SIZE: usize = 16;

/// Fixed-size rectangular cells covering an image in raster order. Cells in
/// the last row and column are truncated when the image size is not a
/// multiple of the cell size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperPixelGrid {
    cell_size: usize,
    width: usize,
    height: usize,
    cols: usize,
    rows: usize,
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

pub fn partition(width: usize, height: usize, cell_size: usize) -> Result<SuperPixelGrid> {
    if cell_size < 2 {
        return Err(Error::InvalidGrid(format!("cell size must be >= 2, got {cell_size}")));
    }
    if width == 0 || height == 0 || cell_size > width.min(height) {
        return Err(Error::InvalidGrid(format!(
            "cell size {cell_size} does not fit a {width}x{height} image"
        )));
    }
    Ok(SuperPixelGrid {
        cell_size,
        width,
        height,
        cols: width.div_ceil(cell_size),
        rows: height.div_ceil(cell_size),
    })
}

impl SuperPixelGrid {
    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` of a cell id.
    pub fn position(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    pub fn cell_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell_of_pixel(&self, x: usize, y: usize) -> usize {
        self.cell_at(y / self.cell_size, x / self.cell_size)
    }

    pub fn rect(&self, cell: usize) -> PixelRect {
        let (r, c) = self.position(cell);
        let cs = self.cell_size;
        PixelRect {
            x0: c * cs,
            y0: r * cs,
            x1: ((c + 1) * cs).min(self.width),
            y1: ((r + 1) * cs).min(self.height),
        }
    }

    /// Pixel centroid `(row, col)` of a cell.
    pub fn centroid(&self, cell: usize) -> (f64, f64) {
        let r = self.rect(cell);
        (
            (r.y0 + r.y1 - 1) as f64 / 2.0,
            (r.x0 + r.x1 - 1) as f64 / 2.0,
        )
    }

    /// Cell id for every pixel, row-major.
    pub fn membership(&self) -> Vec<usize> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.cell_of_pixel(x, y))
            .collect()
    }

    /// Neighbor pairs `(a, b)` with `a < b`, in raster order of `a`.
    pub fn neighbor_pairs(&self, connectivity: Connectivity) -> Vec<(usize, usize)> {
        let offsets: &[(isize, isize)] = match connectivity {
            Connectivity::Four => &[(0, 1), (1, 0)],
            Connectivity::Eight => &[(0, 1), (1, -1), (1, 0), (1, 1)],
        };
        let mut pairs = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                for &(dr, dc) in offsets {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
                        continue;
                    }
                    pairs.push((self.cell_at(r, c), self.cell_at(nr as usize, nc as usize)));
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Mean, population standard deviation and energy (mean of squares).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub energy: f64,
}

impl CellStats {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        Self::from_sums(n, sum, sq)
    }

    fn of_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for row in rows {
            n += row.len();
            for v in row {
                sum += v;
                sq += v * v;
            }
        }
        Self::from_sums(n, sum, sq)
    }

    fn from_sums(n: usize, sum: f64, sq: f64) -> Self {
        let n = n as f64;
        let mean = sum / n;
        let energy = sq / n;
        Self {
            mean,
            std: (energy - mean * mean).max(0.0).sqrt(),
            energy,
        }
    }
}

/// Row-major `cells x dim` feature matrix.
///
/// Each row is laid out as `x1` for every channel (`mean, std, energy`),
/// followed by `x2` channel-major, filter-group-minor, again as
/// `mean, std, energy` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperPixelFeatures {
    dim: usize,
    channels: usize,
    groups: usize,
    values: Vec<f64>,
    centroids: Vec<(f64, f64)>,
}

impl SuperPixelFeatures {
    /// Wraps an arbitrary feature matrix, e.g. synthetic data.
    pub fn from_rows(rows: Vec<Vec<f64>>, centroids: Vec<(f64, f64)>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) || centroids.len() != rows.len() {
            return Err(Error::InvalidParams("ragged feature matrix".into()));
        }
        Ok(Self {
            dim,
            channels: 0,
            groups: 0,
            values: rows.into_iter().flatten().collect(),
            centroids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn centroid(&self, cell: usize) -> (f64, f64) {
        self.centroids[cell]
    }

    /// Color statistics of one cell and channel.
    pub fn color(&self, cell: usize, channel: usize) -> CellStats {
        self.triple(cell, channel * 3)
    }

    /// Texture statistics of one cell, channel and filter group.
    pub fn texture(&self, cell: usize, channel: usize, group: usize) -> CellStats {
        self.triple(cell, self.channels * 3 + (channel * self.groups + group) * 3)
    }

    fn triple(&self, cell: usize, offset: usize) -> CellStats {
        let r = self.row(cell);
        CellStats {
            mean: r[offset],
            std: r[offset + 1],
            energy: r[offset + 2],
        }
    }

    /// Writes `cell, row, col, f0, f1, ...` as tab-separated text.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for cell in 0..self.len() {
            let (r, c) = self.centroids[cell];
            write!(out, "{cell}\t{r}\t{c}")?;
            for v in self.row(cell) {
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Computes per-cell statistics of each image channel and of each pooled
/// texture map. `stacks[c]` must hold the responses of channel `c`.
pub fn compute_features(
    img: &RasterImage,
    stacks: &[ResponseStack],
    grid: &SuperPixelGrid,
) -> Result<SuperPixelFeatures> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if grid.width() != w || grid.height() != h {
        return Err(Error::InvalidGrid(format!(
            "grid covers {}x{}, image is {w}x{h}",
            grid.width(),
            grid.height()
        )));
    }
    if stacks.len() != ch {
        return Err(Error::InvalidParams(format!(
            "expected {ch} response stacks, got {}",
            stacks.len()
        )));
    }
    let groups = stacks.first().map_or(0, ResponseStack::len);
    for s in stacks {
        if s.len() != groups || s.maps.iter().any(|m| m.width() != w || m.height() != h) {
            return Err(Error::InvalidParams("response maps do not match the image".into()));
        }
    }
    let dim = ch * 3 + ch * groups * 3;
    let mut values = Vec::with_capacity(grid.len() * dim);
    let mut centroids = Vec::with_capacity(grid.len());
    for cell in 0..grid.len() {
        let rect = grid.rect(cell);
        for c in 0..ch {
            let s = CellStats::of(
                (rect.y0..rect.y1)
                    .flat_map(|y| (rect.x0..rect.x1).map(move |x| (x, y)))
                    .map(|(x, y)| img.get(x, y, c)),
            );
            values.extend([s.mean, s.std, s.energy]);
        }
        for stack in stacks {
            for map in &stack.maps {
                let s = CellStats::of_rows((rect.y0..rect.y1).map(|y| &map.data()[y * w..][rect.x0..rect.x1]));
                values.extend([s.mean, s.std, s.energy]);
            }
        }
        centroids.push(grid.centroid(cell));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature {
                cell: i / dim,
                dim: i % dim,
            });
        }
    }
    Ok(SuperPixelFeatures {
        dim,
        channels: ch,
        groups,
        values,
        centroids,
    })
}

/// Per-dimension mean and scale removed by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Z-scores every dimension across cells. Dimensions with standard
/// deviation below `1e-12` become zero and record a scale of 1.
pub fn standardize(features: &SuperPixelFeatures) -> Result<(SuperPixelFeatures, Standardization)> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFewCells { needed: 2, got: n });
    }
    let d = features.dim;
    let mut mean = vec![0.0; d];
    for cell in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(cell)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for cell in 0..n {
        for ((s, v), m) in var.iter_mut().zip(features.row(cell)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    let degenerate: Vec<bool> = std.iter().map(|&s| s < 1e-12).collect();
    for (s, &deg) in std.iter_mut().zip(&degenerate) {
        if deg {
            *s = 1.0;
        }
    }
    let mut values = features.values.clone();
    for row in values.chunks_exact_mut(d) {
        for j in 0..d {
            row[j] = if degenerate[j] { 0.0 } else { (row[j] - mean[j]) / std[j] };
        }
    }
    let z = SuperPixelFeatures {
        values,
        ..features.clone()
    };
    Ok((z, Standardization { mean, std }))
}

/// How the spatial normalizer `d̄(S)` is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceNormalization {
    /// Mean centroid distance over graph edges.
    #[default]
    NeighborPairs,
    /// Mean centroid distance over every unordered cell pair.
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub feature_distance: f64,
    pub spatial_distance: f64,
    pub weight: f64,
}

/// Symmetric neighbor graph with similarity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    edges: Vec<Edge>,
    /// `neighbors[s]` lists `(s', w(s, s'))`.
    neighbors: Vec<Vec<(usize, f64)>>,
    sigma_x: f64,
    mean_distance: f64,
}

impl AdjacencyGraph {
    /// Builds a graph from explicit weighted edges, e.g. for synthetic
    /// problems. Scalars are left at zero.
    pub fn from_edges(cells: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); cells];
        let mut out = Vec::with_capacity(edges.len());
        for &(a, b, w) in edges {
            if a == b || a >= cells || b >= cells || !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParams(format!("invalid edge ({a}, {b}, {w})")));
            }
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
            out.push(Edge {
                a,
                b,
                feature_distance: 0.0,
                spatial_distance: 0.0,
                weight: w,
            });
        }
        Ok(Self {
            edges: out,
            neighbors,
            sigma_x: 0.0,
            mean_distance: 0.0,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, cell: usize) -> &[(usize, f64)] {
        &self.neighbors[cell]
    }

    pub fn cells(&self) -> usize {
        self.neighbors.len()
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn mean_distance(&self) -> f64 {
        self.mean_distance
    }

    /// `w(s, s')`, or `None` when the cells are not neighbors.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.neighbors[a].iter().find(|(n, _)| *n == b).map(|&(_, w)| w)
    }

    /// Writes `a, b, feature_distance, spatial_distance, weight` rows.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for e in &self.edges {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.a, e.b, e.feature_distance, e.spatial_distance, e.weight
            )?;
        }
        Ok(())
    }
}

/// `exp(-d_x / (2 sigma_x^2)) * (d_s / mean_d)^-1`. A vanishing `sigma_x`
/// (all feature distances equal) leaves only the spatial factor.
pub fn similarity(feature_distance: f64, spatial_distance: f64, sigma_x: f64, mean_distance: f64) -> f64 {
    let feature_term = if sigma_x > 1e-12 {
        (-feature_distance / (2.0 * sigma_x * sigma_x)).exp()
    } else {
        1.0
    };
    feature_term * mean_distance / spatial_distance
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn centroid_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Neighbor graph over grid cells with weights from [`similarity`].
///
/// `sigma_x` is the population standard deviation of feature distances over
/// the edges.
pub fn build_adjacency(
    grid: &SuperPixelGrid,
    features: &SuperPixelFeatures,
    connectivity: Connectivity,
    normalization: DistanceNormalization,
) -> Result<AdjacencyGraph> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::TooFewCells { needed: 2, got: n });
    }
    if features.len() != n {
        return Err(Error::InvalidParams(format!(
            "grid has {n} cells, features have {}",
            features.len()
        )));
    }
    let pairs = grid.neighbor_pairs(connectivity);
    let feature_d: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| euclidean(features.row(a), features.row(b)))
        .collect();
    let spatial_d: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| centroid_distance(features.centroid(a), features.centroid(b)))
        .collect();
    let m = pairs.len() as f64;
    let fmean = feature_d.iter().sum::<f64>() / m;
    let sigma_x = (feature_d.iter().map(|d| (d - fmean).powi(2)).sum::<f64>() / m).sqrt();
    let mean_distance = match normalization {
        DistanceNormalization::NeighborPairs => spatial_d.iter().sum::<f64>() / m,
        DistanceNormalization::AllPairs => {
            let mut total = 0.0;
            for a in 0..n {
                for b in a + 1..n {
                    total += centroid_distance(features.centroid(a), features.centroid(b));
                }
            }
            total / (n * (n - 1) / 2) as f64
        }
    };

    let mut neighbors = vec![Vec::new(); n];
    let edges = pairs
        .iter()
        .zip(feature_d.iter().zip(&spatial_d))
        .map(|(&(a, b), (&fd, &sd))| {
            let weight = similarity(fd, sd, sigma_x, mean_distance);
            neighbors[a].push((b, weight));
            neighbors[b].push((a, weight));
            Edge {
                a,
                b,
                feature_distance: fd,
                spatial_distance: sd,
                weight,
            }
        })
        .collect();
    Ok(AdjacencyGraph {
        edges,
        neighbors,
        sigma_x,
        mean_distance,
    })
}
