//! In-memory raster types and the pixel-level operations that precede
//! segmentation: grayscale conversion, max-filter dilation and histogram
//! entropy.
//!
//! Pixel values are `f64` in `[0, 1]`. Color images are stored interleaved,
//! row-major (`data[(y * width + x) * channels + c]`).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luma weights used by [`to_grayscale`].
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Entropy (bits) separating scene-like from product-like images.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 6.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from 8-bit samples, dividing by 255.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let v = value.clamp(0.0, 1.0);
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extracts one channel as a [`GrayImage`].
    pub fn channel(&self, c: usize) -> GrayImage {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Copies the half-open pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidImage(format!(
                "crop [{x0},{x1})x[{y0},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let w = x1 - x0;
        let mut data = Vec::with_capacity(w * (y1 - y0) * self.channels);
        for y in y0..y1 {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(Self {
            width: w,
            height: y1 - y0,
            channels: self.channels,
            data,
        })
    }
}

impl From<GrayImage> for RasterImage {
    fn from(g: GrayImage) -> Self {
        Self {
            width: g.width,
            height: g.height,
            channels: 1,
            data: g.data,
        }
    }
}

/// Single-channel image. Values are normally in `[0, 1]`, but filter
/// responses reuse the type and may be signed.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }
}

/// Structuring element for [`dilate`]: a set of offsets around a centered
/// anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationKernel {
    radius: usize,
    sigma: f64,
    support: Vec<(isize, isize)>,
}

impl DilationKernel {
    /// Fraction of the Gaussian peak that an offset must exceed to belong to
    /// the support.
    pub const SUPPORT_CUTOFF: f64 = 0.01;
    pub const DEFAULT_SIGMA: f64 = 2.0;
    pub const DEFAULT_RADIUS: usize = 5;

    /// Support of a Gaussian of width `sigma`, truncated to a
    /// `(2 radius + 1)` square window.
    pub fn gaussian(radius: usize, sigma: f64) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidConfig("dilation radius must be >= 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dilation sigma must be positive, got {sigma}"
            )));
        }
        let r = radius as isize;
        let mut support = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f64;
                if (-d2 / (2.0 * sigma * sigma)).exp() > Self::SUPPORT_CUTOFF {
                    support.push((dx, dy));
                }
            }
        }
        Ok(Self {
            radius,
            sigma,
            support,
        })
    }

    /// Full square support, `(2 radius + 1)^2` offsets.
    pub fn square(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidConfig("dilation radius must be >= 1".into()));
        }
        let r = radius as isize;
        let support = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .collect();
        Ok(Self {
            radius,
            sigma: f64::INFINITY,
            support,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Offsets `(dx, dy)` relative to the anchor.
    pub fn support(&self) -> &[(isize, isize)] {
        &self.support
    }

    /// Groups the support into horizontal runs `(dy, lo, hi)`.
    fn runs(&self) -> Vec<(isize, isize, isize)> {
        let mut rows: Vec<(isize, isize)> = self.support.iter().map(|&(dx, dy)| (dy, dx)).collect();
        rows.sort_unstable();
        let mut runs: Vec<(isize, isize, isize)> = Vec::new();
        for (dy, dx) in rows {
            match runs.last_mut() {
                Some(last) if last.0 == dy && last.2 + 1 == dx => last.2 = dx,
                _ => runs.push((dy, dx, dx)),
            }
        }
        runs
    }
}

impl Default for DilationKernel {
    fn default() -> Self {
        Self::gaussian(Self::DEFAULT_RADIUS, Self::DEFAULT_SIGMA).expect("valid default kernel")
    }
}

/// Combines channels with [`LUMA_WEIGHTS`]; single-channel input is copied.
pub fn to_grayscale(img: &RasterImage) -> Result<GrayImage> {
    let data = match img.channels {
        1 => img.data.clone(),
        3 => img
            .data
            .chunks_exact(3)
            .map(|p| {
                (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
                    .clamp(0.0, 1.0)
            })
            .collect(),
        n => return Err(Error::UnsupportedChannels(n)),
    };
    GrayImage::new(img.width, img.height, data)
}

/// Grayscale morphological dilation: each output sample is the maximum of
/// the input over the kernel support centered on it, per channel. The
/// support is clipped at the image border.
pub fn dilate(img: &RasterImage, kernel: &DilationKernel) -> Result<RasterImage> {
    let (w, h, ch) = (img.width, img.height, img.channels);
    if kernel.radius >= w.min(h) {
        return Err(Error::KernelTooLarge {
            kernel: 2 * kernel.radius + 1,
            width: w,
            height: h,
        });
    }
    let runs = kernel.runs();

    // Horizontal running maxima, one buffer per distinct (lo, hi) run.
    let mut row_max: HashMap<(isize, isize), Vec<f64>> = HashMap::new();
    for &(_, lo, hi) in &runs {
        row_max.entry((lo, hi)).or_insert_with(|| {
            let mut buf = vec![0.0; img.data.len()];
            for y in 0..h {
                for x in 0..w {
                    let from = (x as isize + lo).max(0) as usize;
                    let to = (x as isize + hi).min(w as isize - 1);
                    for c in 0..ch {
                        let mut m = f64::NEG_INFINITY;
                        if to >= from as isize {
                            for xx in from..=to as usize {
                                m = m.max(img.data[(y * w + xx) * ch + c]);
                            }
                        }
                        buf[(y * w + x) * ch + c] = m;
                    }
                }
            }
            buf
        });
    }

    let mut out = vec![f64::NEG_INFINITY; img.data.len()];
    for &(dy, lo, hi) in &runs {
        let src = &row_max[&(lo, hi)];
        for y in 0..h {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            let src_row = &src[yy as usize * w * ch..(yy as usize + 1) * w * ch];
            let dst_row = &mut out[y * w * ch..(y + 1) * w * ch];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                if *s > *d {
                    *d = *s;
                }
            }
        }
    }
    // An empty clipped support cannot occur while the anchor is in the
    // support, but keep the input value if it does.
    for (o, v) in out.iter_mut().zip(&img.data) {
        if !o.is_finite() {
            *o = *v;
        }
    }
    Ok(RasterImage {
        width: w,
        height: h,
        channels: ch,
        data: out,
    })
}

/// Histogram bin of a `[0, 1]` sample. The epsilon keeps values decoded from
/// 8-bit sources (`k / 255`) in bin `k` despite rounding.
#[inline]
pub fn intensity_bin(v: f64) -> usize {
    ((v * 255.0 + 1e-9).floor()).clamp(0.0, 255.0) as usize
}

/// Shannon entropy, in bits, of the 256-bin intensity histogram.
pub fn shannon_entropy(img: &GrayImage) -> f64 {
    let mut hist = [0usize; 256];
    for &v in &img.data {
        hist[intensity_bin(v)] += 1;
    }
    let n = img.data.len() as f64;
    let e: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    e.clamp(0.0, 8.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyClass {
    /// Cluttered natural scenes (around 7 bits).
    SceneLike,
    /// Product shots on plain backgrounds (around 6 bits).
    ProductLike,
}

impl std::fmt::Display for EntropyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntropyClass::SceneLike => f.write_str("SceneLike"),
            EntropyClass::ProductLike => f.write_str("ProductLike"),
        }
    }
}

/// `e >= threshold` is scene-like.
pub fn classify_entropy(e: f64, threshold: f64) -> EntropyClass {
    if e >= threshold {
        EntropyClass::SceneLike
    } else {
        EntropyClass::ProductLike
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, ch: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * ch).map(|_| rng.gen::<f64>()).collect();
        RasterImage::new(w, h, ch, data).unwrap()
    }

    fn brute_force_dilate(img: &RasterImage, k: &DilationKernel) -> RasterImage {
        let mut out = img.clone();
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..img.channels() {
                    let mut m = f64::NEG_INFINITY;
                    for &(dx, dy) in k.support() {
                        let (xx, yy) = (x as isize + dx, y as isize + dy);
                        if xx >= 0 && yy >= 0 && (xx as usize) < img.width() && (yy as usize) < img.height() {
                            m = m.max(img.get(xx as usize, yy as usize, c));
                        }
                    }
                    out.set(x, y, c, m);
                }
            }
        }
        out
    }

    #[test]
    fn grayscale_of_mid_gray_is_mid_gray() {
        let img = RasterImage::filled(4, 3, 3, 0.5).unwrap();
        let g = to_grayscale(&img).unwrap();
        assert!(g.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn grayscale_copies_single_channel() {
        let img = random_image(5, 4, 1, 3);
        let g = to_grayscale(&img).unwrap();
        assert_eq!(g.data(), img.data());
    }

    #[test]
    fn grayscale_of_pure_red() {
        let img = RasterImage::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_grayscale(&img).unwrap().get(0, 0), 0.299);
    }

    #[test]
    fn rejects_two_channels() {
        assert!(matches!(
            RasterImage::new(1, 1, 2, vec![0.0, 0.0]),
            Err(Error::UnsupportedChannels(2))
        ));
    }

    #[test]
    fn dilation_of_constant_is_identity() {
        let img = RasterImage::filled(12, 9, 3, 0.37).unwrap();
        assert_eq!(dilate(&img, &DilationKernel::default()).unwrap(), img);
    }

    #[test]
    fn dilation_impulse_response_is_footprint() {
        let mut img = RasterImage::filled(7, 7, 1, 0.0).unwrap();
        img.set(3, 3, 0, 1.0);
        let out = dilate(&img, &DilationKernel::square(1).unwrap()).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(out.get(x, y, 0), if inside { 1.0 } else { 0.0 }, "({x},{y})");
            }
        }
    }

    #[test]
    fn dilation_matches_brute_force_16() {
        let img = random_image(16, 16, 3, 11);
        let k = DilationKernel::gaussian(2, 2.0).unwrap();
        assert_eq!(dilate(&img, &k).unwrap(), brute_force_dilate(&img, &k));
    }

    #[test]
    fn dilation_rejects_oversized_kernel() {
        let img = RasterImage::filled(5, 20, 1, 0.0).unwrap();
        let k = DilationKernel::square(5).unwrap();
        assert!(matches!(dilate(&img, &k), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn default_support_is_symmetric_disk() {
        let k = DilationKernel::default();
        for &(dx, dy) in k.support() {
            assert!(k.support().contains(&(-dx, -dy)));
        }
        assert!(k.support().contains(&(0, 0)));
        assert!(k.support().contains(&(5, 0)));
        assert!(!k.support().contains(&(5, 5)));
    }

    #[test]
    fn entropy_examples() {
        let flat = GrayImage::filled(8, 8, 0.3).unwrap();
        assert_eq!(shannon_entropy(&flat), 0.0);

        let two = GrayImage::new(4, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((shannon_entropy(&two) - 1.0).abs() < 1e-12);

        let ramp = GrayImage::new(256, 2, (0..512).map(|i| (i % 256) as f64 / 255.0).collect()).unwrap();
        assert!((shannon_entropy(&ramp) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_classes() {
        assert_eq!(classify_entropy(7.0, DEFAULT_ENTROPY_THRESHOLD), EntropyClass::SceneLike);
        assert_eq!(classify_entropy(6.0, DEFAULT_ENTROPY_THRESHOLD), EntropyClass::ProductLike);
        assert_eq!(classify_entropy(6.5, DEFAULT_ENTROPY_THRESHOLD), EntropyClass::SceneLike);
    }

    #[test]
    fn crop_copies_rectangle() {
        let img = random_image(10, 8, 3, 5);
        let c = img.crop(2, 3, 7, 8).unwrap();
        assert_eq!((c.width(), c.height()), (5, 5));
        assert_eq!(c.get(0, 0, 2), img.get(2, 3, 2));
        assert_eq!(c.get(4, 4, 1), img.get(6, 7, 1));
        assert!(img.crop(2, 3, 11, 8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dilation_matches_oracle(w in 6usize..64, h in 6usize..64, seed: u64, r in 1usize..5) {
            let img = random_image(w, h, 1, seed);
            let k = DilationKernel::gaussian(r.min(w.min(h) - 1), 2.0).unwrap();
            prop_assert_eq!(dilate(&img, &k).unwrap(), brute_force_dilate(&img, &k));
        }

        #[test]
        fn dilation_is_extensive_and_monotone(seed: u64, bump in 0.0f64..0.5) {
            let a = random_image(20, 17, 3, seed);
            let b_data: Vec<f64> = a.data().iter().map(|v| (v + bump).min(1.0)).collect();
            let b = RasterImage::new(20, 17, 3, b_data).unwrap();
            let k = DilationKernel::default();
            let da = dilate(&a, &k).unwrap();
            let db = dilate(&b, &k).unwrap();
            for ((x, y), z) in a.data().iter().zip(da.data()).zip(db.data()) {
                prop_assert!(y >= x);
                prop_assert!(z >= y);
            }
        }

        #[test]
        fn entropy_bounded_and_permutation_invariant(seed: u64) {
            let img = random_image(13, 11, 1, seed);
            let g = to_grayscale(&img).unwrap();
            let e = shannon_entropy(&g);
            prop_assert!((0.0..=8.0).contains(&e));
            let mut rev = g.data().to_vec();
            rev.reverse();
            let r = GrayImage::new(13, 11, rev).unwrap();
            prop_assert_eq!(shannon_entropy(&r), e);
        }

        #[test]
        fn grayscale_bounded(seed: u64) {
            let g = to_grayscale(&random_image(9, 9, 3, seed)).unwrap();
            prop_assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
