//! Deterministic synthetic images with known answers, for tests, benches
//! and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evaluation::GroundTruthBox;
use crate::image::RasterImage;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5x7 bitmaps, one string of `#`/`.` per row.
const FONT: [(char, [&str; GLYPH_H]); 36] = [
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["####.", "....#", "....#", ".###.", "....#", "....#", "####."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."]),
];

const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn glyph(c: char) -> Option<&'static [&'static str; GLYPH_H]> {
    FONT.iter().find(|(g, _)| *g == c.to_ascii_uppercase()).map(|(_, rows)| rows)
}

/// Pixel extent of `text` rendered at `scale`: glyphs are `5 * scale`
/// wide with one blank column (`scale` pixels) between them.
pub fn text_extent(text: &str, scale: usize) -> (usize, usize) {
    let n = text.chars().count();
    if n == 0 {
        return (0, 0);
    }
    ((n * (GLYPH_W + 1) - 1) * scale, GLYPH_H * scale)
}

/// Draws `text` with its top-left corner at `(x, y)` and returns the tight
/// ink box. Unknown characters render as blanks.
pub fn draw_text(img: &mut RasterImage, text: &str, x: usize, y: usize, scale: usize, color: &[f64]) -> GroundTruthBox {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = x + i * (GLYPH_W + 1) * scale;
        for (r, row) in rows.iter().enumerate() {
            for (col, bit) in row.bytes().enumerate() {
                if bit != b'#' {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (px, py) = (gx + col * scale + dx, y + r * scale + dy);
                        if px < img.width() && py < img.height() {
                            for (ch, v) in color.iter().enumerate().take(img.channels()) {
                                img.set(px, py, ch, *v);
                            }
                            x0 = x0.min(px);
                            y0 = y0.min(py);
                            x1 = x1.max(px + 1);
                            y1 = y1.max(py + 1);
                        }
                    }
                }
            }
        }
    }
    if x0 == usize::MAX {
        return GroundTruthBox::new(x as f64, y as f64, x as f64, y as f64);
    }
    let mut gt = GroundTruthBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
    gt.transcription = Some(text.to_string());
    gt
}

/// Left half flat mid-gray, right half a black/white checkerboard of
/// `checker`-pixel squares.
pub fn half_flat_checkerboard(size: usize, checker: usize) -> RasterImage {
    let mut img = RasterImage::filled(size, size, 3, 0.5).expect("non-empty image");
    for y in 0..size {
        for x in size / 2..size {
            let v = if ((x - size / 2) / checker + y / checker) % 2 == 0 { 0.0 } else { 1.0 };
            for c in 0..3 {
                img.set(x, y, c, v);
            }
        }
    }
    img
}

/// Independent uniform values in every channel.
pub fn uniform_noise(width: usize, height: usize, channels: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels).map(|_| rng.gen::<f64>()).collect();
    RasterImage::new(width, height, channels, data).expect("valid dimensions")
}

/// Flat background with a few solid color blocks, like a product shot.
pub fn flat_product(width: usize, height: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RasterImage::filled(width, height, 3, 1.0).expect("non-empty image");
    for _ in 0..3 {
        let (w, h) = (rng.gen_range(width / 6..width / 2), rng.gen_range(height / 6..height / 2));
        let (x, y) = (rng.gen_range(0..width - w), rng.gen_range(0..height - h));
        let color: Vec<f64> = (0..3).map(|_| f64::from(rng.gen_range(0u8..=255)) / 255.0).collect();
        fill_rect(&mut img, x, y, x + w, y + h, &color);
    }
    img
}

fn fill_rect(img: &mut RasterImage, x0: usize, y0: usize, x1: usize, y1: usize, color: &[f64]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            for (c, v) in color.iter().enumerate().take(img.channels()) {
                img.set(x, y, c, *v);
            }
        }
    }
}

fn fill_ellipse(img: &mut RasterImage, cx: f64, cy: f64, rx: f64, ry: f64, color: &[f64]) {
    let (x0, x1) = ((cx - rx).floor().max(0.0) as usize, (cx + rx).ceil() as usize);
    let (y0, y1) = ((cy - ry).floor().max(0.0) as usize, (cy + ry).ceil() as usize);
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                for (c, v) in color.iter().enumerate().take(img.channels()) {
                    img.set(x, y, c, *v);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextScene {
    pub image: RasterImage,
    pub truth: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub lines: (usize, usize),
    pub chars: (usize, usize),
    pub scales: (usize, usize),
    pub clutter: (usize, usize),
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            lines: (3, 6),
            chars: (4, 9),
            scales: (2, 3),
            clutter: (6, 12),
            noise: 0.03,
        }
    }
}

/// High-contrast glyph words on a cluttered background: a smooth colored
/// gradient, large colored rectangles and ellipses, and pixel noise. Clutter
/// keeps a margin around every word so truth boxes stay tight.
pub fn text_scene(params: &SceneParams, seed: u64) -> TextScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let base: Vec<f64> = (0..3).map(|_| rng.gen_range(0.75..0.95)).collect();
    let tilt: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut img = RasterImage::filled(w, h, 3, 0.0).expect("non-empty image");
    for y in 0..h {
        for x in 0..w {
            let t = (x + y) as f64 / (w + h) as f64 - 0.5;
            for c in 0..3 {
                img.set(x, y, c, base[c] + tilt[c] * t);
            }
        }
    }

    // Word placements first, so clutter can avoid them.
    let mut words: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut reserved: Vec<(usize, usize, usize, usize)> = Vec::new();
    let margin = 10;
    let target = rng.gen_range(params.lines.0..=params.lines.1);
    let mut attempts = 0;
    while words.len() < target && attempts < 200 {
        attempts += 1;
        let n = rng.gen_range(params.chars.0..=params.chars.1);
        let text: String = (0..n)
            .map(|_| ALPHABET.as_bytes()[rng.gen_range(0..ALPHABET.len())] as char)
            .collect();
        let scale = rng.gen_range(params.scales.0..=params.scales.1);
        let (tw, th) = text_extent(&text, scale);
        if tw + 2 * margin >= w || th + 2 * margin >= h {
            continue;
        }
        let x = rng.gen_range(margin..w - tw - margin);
        let y = rng.gen_range(margin..h - th - margin);
        let zone = (x - margin, y - margin, x + tw + margin, y + th + margin);
        let clash = reserved
            .iter()
            .any(|r| zone.0 < r.2 && r.0 < zone.2 && zone.1 < r.3 && r.1 < zone.3);
        if !clash {
            reserved.push(zone);
            words.push((text, x, y, scale));
        }
    }

    let shapes = rng.gen_range(params.clutter.0..=params.clutter.1);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < shapes && attempts < 400 {
        attempts += 1;
        let (sw, sh) = (rng.gen_range(36..150usize), rng.gen_range(36..150usize));
        if sw >= w || sh >= h {
            continue;
        }
        let (x, y) = (rng.gen_range(0..w - sw), rng.gen_range(0..h - sh));
        let clash = reserved
            .iter()
            .any(|r| x < r.2 && r.0 < x + sw && y < r.3 && r.1 < y + sh);
        if clash {
            continue;
        }
        let color: Vec<f64> = (0..3).map(|_| rng.gen_range(0.3..0.8)).collect();
        if rng.gen_bool(0.5) {
            fill_rect(&mut img, x, y, x + sw, y + sh, &color);
        } else {
            let (rx, ry) = (sw as f64 / 2.0, sh as f64 / 2.0);
            fill_ellipse(&mut img, x as f64 + rx, y as f64 + ry, rx, ry, &color);
        }
        placed += 1;
    }

    let mut truth = Vec::with_capacity(words.len());
    for (text, x, y, scale) in &words {
        let ink: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.15)).collect();
        truth.push(draw_text(&mut img, text, *x, *y, *scale, &ink));
    }

    if params.noise > 0.0 {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = img.get(x, y, c) + rng.gen_range(-params.noise..params.noise);
                    img.set(x, y, c, v);
                }
            }
        }
    }
    TextScene { image: img, truth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn font_is_complete_and_well_formed() {
        for c in ALPHABET.chars() {
            let rows = glyph(c).unwrap_or_else(|| panic!("missing {c}"));
            assert!(rows.iter().all(|r| r.len() == GLYPH_W), "{c}");
        }
    }

    #[test]
    fn drawn_text_box_matches_extent() {
        let mut img = RasterImage::filled(100, 40, 1, 1.0).unwrap();
        let gt = draw_text(&mut img, "HI", 10, 5, 2, &[0.0]);
        let (tw, th) = text_extent("HI", 2);
        assert_eq!((gt.x1, gt.y1, gt.x2, gt.y2), (10.0, 5.0, 10.0 + tw as f64, 5.0 + th as f64));
        assert_eq!(img.get(10, 5, 0), 0.0);
        assert_eq!(img.get(12, 7, 0), 1.0);
    }

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let p = SceneParams { width: 256, height: 256, ..Default::default() };
        let a = text_scene(&p, 9);
        let b = text_scene(&p, 9);
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
        assert!(!a.truth.is_empty());
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkerboard_halves() {
        let img = half_flat_checkerboard(32, 4);
        assert_eq!(img.get(3, 3, 0), 0.5);
        assert_eq!(img.get(16, 0, 0), 0.0);
        assert_eq!(img.get(20, 0, 0), 1.0);
    }
}
