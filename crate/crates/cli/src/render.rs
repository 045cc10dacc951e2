//! Image files in and out: loading, box overlays and label maps.

use std::path::Path;

use anyhow::Context;
use entroseg_core::detection::DetBox;
use entroseg_core::evaluation::GroundTruthBox;
use entroseg_core::image::RasterImage;
use entroseg_core::superpixel::SuperPixelGrid;
use image::{ColorType, DynamicImage, Rgb, RgbImage};

pub const PREDICTION: Rgb<u8> = Rgb([0, 0, 255]);
pub const GROUND_TRUTH: Rgb<u8> = Rgb([255, 0, 0]);

/// Reads any supported raster file. Grayscale files stay single-channel,
/// everything else becomes RGB; alpha is dropped.
pub fn load_image(path: &Path) -> anyhow::Result<RasterImage> {
    let img = image::open(path).with_context(|| format!("cannot read image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img.color(), ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16);
    let raster = if gray {
        RasterImage::from_u8(w, h, 1, img.to_luma8().as_raw())
    } else {
        RasterImage::from_u8(w, h, 3, img.to_rgb8().as_raw())
    };
    raster.with_context(|| format!("cannot use image {}", path.display()))
}

pub fn to_rgb(img: &RasterImage) -> RgbImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_u8();
    match img.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("sized buffer")).to_rgb8(),
        _ => RgbImage::from_raw(w, h, bytes).expect("sized buffer"),
    }
}

/// Outline of the pixels covered by `[x1, x2) x [y1, y2)`, clipped.
fn draw_rect(canvas: &mut RgbImage, (x1, y1, x2, y2): (f64, f64, f64, f64), color: Rgb<u8>) {
    let (w, h) = (canvas.width() as i64, canvas.height() as i64);
    let x0 = (x1.floor() as i64).clamp(0, w - 1);
    let y0 = (y1.floor() as i64).clamp(0, h - 1);
    let x1 = ((x2.ceil() as i64) - 1).clamp(0, w - 1);
    let y1 = ((y2.ceil() as i64) - 1).clamp(0, h - 1);
    if x1 < x0 || y1 < y0 {
        return;
    }
    for x in x0..=x1 {
        canvas.put_pixel(x as u32, y0 as u32, color);
        canvas.put_pixel(x as u32, y1 as u32, color);
    }
    for y in y0..=y1 {
        canvas.put_pixel(x0 as u32, y as u32, color);
        canvas.put_pixel(x1 as u32, y as u32, color);
    }
}

/// Copy of the input with predictions in blue and ground truth in red.
/// Truth is drawn last so it stays visible where the two coincide.
pub fn overlay(img: &RasterImage, predictions: &[DetBox], truth: &[GroundTruthBox]) -> RgbImage {
    let mut canvas = to_rgb(img);
    if canvas.width() == 0 || canvas.height() == 0 {
        return canvas;
    }
    for b in predictions {
        draw_rect(&mut canvas, (b.x1, b.y1, b.x2, b.y2), PREDICTION);
    }
    for t in truth {
        draw_rect(&mut canvas, (t.x1, t.y1, t.x2, t.y2), GROUND_TRUTH);
    }
    canvas
}

/// Distinct, deterministic colour per label (golden-angle hue walk).
fn label_color(label: usize) -> Rgb<u8> {
    let hue = (label as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |u: f64| ((u + m) * 255.0).round() as u8;
    Rgb([byte(r), byte(g), byte(b)])
}

/// Pixel-resolution map of the per-cell labels.
pub fn label_map(grid: &SuperPixelGrid, labels: &[usize]) -> RgbImage {
    let mut out = RgbImage::new(grid.width() as u32, grid.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        *px = label_color(labels[grid.cell_of_pixel(x as usize, y as usize)]);
    }
    out
}

pub fn save_png(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("cannot write {}", path.display()))
}
