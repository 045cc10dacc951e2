//! Leung–Malik texture filter bank.
//!
//! The bank holds oriented first- and second-derivative-of-Gaussian kernels
//! (six orientations per scale, elongated 3:1), eight Laplacian-of-Gaussian
//! kernels and four Gaussians. Derivative responses are pooled by taking the
//! per-pixel maximum of the absolute response over orientations, which
//! makes the texture description rotation invariant.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DEFAULT_SUPPORT: usize = 49;
pub const DEFAULT_DERIV_SCALES: usize = 3;
pub const ORIENTATIONS: usize = 6;
/// Long-axis to short-axis ratio of the derivative kernels.
pub const ELONGATION: f64 = 3.0;

/// Base scales of the isotropic filters. LoG kernels use each of these and
/// three times each; Gaussians use each once.
const ISOTROPIC_SCALES: [f64; 4] = [1.0, SQRT_2, 2.0, 2.0 * SQRT_2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterFamily {
    FirstDerivative,
    SecondDerivative,
    LaplacianOfGaussian,
    Gaussian,
}

impl FilterFamily {
    pub fn is_oriented(self) -> bool {
        matches!(self, Self::FirstDerivative | Self::SecondDerivative)
    }
}

/// Square, odd-sized 2-D kernel stored row-major, first row on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || data.len() != size * size {
            return Err(Error::InvalidFilterBank(format!(
                "kernel must be odd-sized and square, got size {size} with {} values",
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            data: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Filter {
    pub family: FilterFamily,
    /// Index into the family's scale list.
    pub scale: usize,
    /// Orientation in radians for derivative filters.
    pub orientation: Option<f64>,
    pub kernel: Kernel,
}

/// One output map `j` of [`max_over_orientations`]: an oriented
/// `(family, scale)` set pooled by maximum, or a single isotropic filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGroup {
    pub family: FilterFamily,
    pub scale: usize,
    /// Indices into [`FilterBank::filters`].
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    support: usize,
    deriv_scales: usize,
    filters: Vec<Filter>,
    groups: Vec<FilterGroup>,
}

impl FilterBank {
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn deriv_scales(&self) -> usize {
        self.deriv_scales
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn groups(&self) -> &[FilterGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        build_lm_filterbank(DEFAULT_SUPPORT, DEFAULT_DERIV_SCALES).expect("valid default bank")
    }
}

fn gauss_1d(sigma: f64, x: f64, order: u8) -> f64 {
    let variance = sigma * sigma;
    let g = (-x * x / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt();
    match order {
        0 => g,
        1 => -g * x / variance,
        _ => g * (x * x - variance) / (variance * variance),
    }
}

/// Subtracts the mean when `zero_mean`, then scales to unit L1 norm.
fn normalise(mut data: Vec<f64>, zero_mean: bool) -> Vec<f64> {
    if zero_mean {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|v| *v -= mean);
    }
    let l1: f64 = data.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        data.iter_mut().for_each(|v| *v /= l1);
    }
    data
}

/// Evaluates `f(x, y)` on the support grid with `y` pointing up.
fn sample(support: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let half = (support / 2) as f64;
    let mut data = Vec::with_capacity(support * support);
    for row in 0..support {
        let y = half - row as f64;
        for col in 0..support {
            let x = col as f64 - half;
            data.push(f(x, y));
        }
    }
    data
}

fn derivative_kernel(support: usize, sigma: f64, angle: f64, order: u8) -> Kernel {
    let (s, c) = angle.sin_cos();
    let data = sample(support, |x, y| {
        let u = c * x - s * y;
        let v = s * x + c * y;
        gauss_1d(ELONGATION * sigma, u, 0) * gauss_1d(sigma, v, order)
    });
    Kernel {
        size: support,
        data: normalise(data, true),
    }
}

fn log_kernel(support: usize, sigma: f64) -> Kernel {
    let s2 = sigma * sigma;
    let data = sample(support, |x, y| {
        let r2 = x * x + y * y;
        (-r2 / (2.0 * s2)).exp() * (r2 - 2.0 * s2) / (s2 * s2)
    });
    Kernel {
        size: support,
        data: normalise(data, true),
    }
}

fn gaussian_kernel(support: usize, sigma: f64) -> Kernel {
    let s2 = sigma * sigma;
    let data = sample(support, |x, y| (-(x * x + y * y) / (2.0 * s2)).exp());
    Kernel {
        size: support,
        data: normalise(data, false),
    }
}

/// Builds the LM bank: `2 * 6 * deriv_scales` oriented kernels followed by
/// 8 LoG and 4 Gaussian kernels, all `support x support`.
///
/// Derivative scales are `sqrt(2)^i` for `i < deriv_scales`; orientations
/// are `k * pi / 6`.
pub fn build_lm_filterbank(support: usize, deriv_scales: usize) -> Result<FilterBank> {
    if support % 2 == 0 || support < 7 {
        return Err(Error::InvalidFilterBank(format!(
            "support must be odd and >= 7, got {support}"
        )));
    }
    if deriv_scales == 0 {
        return Err(Error::InvalidFilterBank("need at least one derivative scale".into()));
    }
    let mut filters = Vec::new();
    let mut groups = Vec::new();

    for (family, order) in [
        (FilterFamily::FirstDerivative, 1u8),
        (FilterFamily::SecondDerivative, 2u8),
    ] {
        for scale in 0..deriv_scales {
            let sigma = SQRT_2.powi(scale as i32);
            let mut members = Vec::with_capacity(ORIENTATIONS);
            for k in 0..ORIENTATIONS {
                let angle = PI * k as f64 / ORIENTATIONS as f64;
                members.push(filters.len());
                filters.push(Filter {
                    family,
                    scale,
                    orientation: Some(angle),
                    kernel: derivative_kernel(support, sigma, angle, order),
                });
            }
            groups.push(FilterGroup {
                family,
                scale,
                members,
            });
        }
    }

    let log_sigmas = ISOTROPIC_SCALES
        .iter()
        .copied()
        .chain(ISOTROPIC_SCALES.iter().map(|s| 3.0 * s));
    for (scale, sigma) in log_sigmas.enumerate() {
        groups.push(FilterGroup {
            family: FilterFamily::LaplacianOfGaussian,
            scale,
            members: vec![filters.len()],
        });
        filters.push(Filter {
            family: FilterFamily::LaplacianOfGaussian,
            scale,
            orientation: None,
            kernel: log_kernel(support, sigma),
        });
    }
    for (scale, &sigma) in ISOTROPIC_SCALES.iter().enumerate() {
        groups.push(FilterGroup {
            family: FilterFamily::Gaussian,
            scale,
            members: vec![filters.len()],
        });
        filters.push(Filter {
            family: FilterFamily::Gaussian,
            scale,
            orientation: None,
            kernel: gaussian_kernel(support, sigma),
        });
    }

    Ok(FilterBank {
        support,
        deriv_scales,
        filters,
        groups,
    })
}

fn check_fits(img: &GrayImage, kernel_size: usize) -> Result<()> {
    if kernel_size > img.width() || kernel_size > img.height() {
        return Err(Error::KernelTooLarge {
            kernel: kernel_size,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

/// Direct 2-D convolution (kernel flipped) with edge replication; output
/// has the input's size.
pub fn convolve(channel: &GrayImage, kernel: &Kernel) -> Result<GrayImage> {
    check_fits(channel, kernel.size)?;
    let (w, h) = (channel.width(), channel.height());
    let half = kernel.half() as isize;
    let k = kernel.size;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..k {
                let sy = y as isize + half - i as isize;
                for j in 0..k {
                    let sx = x as isize + half - j as isize;
                    acc += kernel.data[i * k + j] * channel.get_clamped(sx, sy);
                }
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::new(w, h, out)
}

/// Pooled texture responses of one channel: one map per
/// [`FilterBank::groups`] entry.
#[derive(Debug, Clone)]
pub struct ResponseStack {
    pub channel: usize,
    pub maps: Vec<GrayImage>,
}

impl ResponseStack {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Folds per-filter responses (bank order) into per-group maps: oriented
/// groups take the per-pixel max of `|response|`, isotropic filters pass
/// through unchanged.
pub fn max_over_orientations(
    bank: &FilterBank,
    responses: &[GrayImage],
    channel: usize,
) -> Result<ResponseStack> {
    let mut maps = Vec::with_capacity(bank.groups.len());
    for group in &bank.groups {
        if let Some(&missing) = group.members.iter().find(|&&m| m >= responses.len()) {
            return Err(Error::MissingResponses(format!(
                "{:?} scale {} (filter {missing})",
                group.family, group.scale
            )));
        }
        maps.push(pool_group(group, |m| &responses[m]));
    }
    Ok(ResponseStack { channel, maps })
}

fn pool_group<'a>(group: &FilterGroup, response: impl Fn(usize) -> &'a GrayImage) -> GrayImage {
    let first = response(group.members[0]);
    if !group.family.is_oriented() {
        return first.clone();
    }
    let mut pooled: Vec<f64> = first.data().iter().map(|v| v.abs()).collect();
    for &m in &group.members[1..] {
        for (p, v) in pooled.iter_mut().zip(response(m).data()) {
            *p = p.max(v.abs());
        }
    }
    GrayImage::new(first.width(), first.height(), pooled).expect("same shape as responses")
}

/// Smallest size `>= n` whose only prime factors are 2, 3 and 5.
fn fft_size(n: usize) -> usize {
    (n..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("unbounded search")
}

/// Applies a whole bank to images of one size through the frequency domain.
///
/// Each channel is edge-replicated by the kernel half-width and transformed
/// once; kernels are processed two at a time by packing them into the real
/// and imaginary parts of one complex kernel. Transforms run in single
/// precision, which halves their cost; responses agree with [`convolve`] to
/// about 1e-6 of the channel's dynamic range, far below anything the cell
/// statistics can resolve.
pub struct BankConvolver<'a> {
    bank: &'a FilterBank,
    width: usize,
    height: usize,
    pad: usize,
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f32>>,
    fwd_y: Arc<dyn Fft<f32>>,
    inv_x: Arc<dyn Fft<f32>>,
    inv_y: Arc<dyn Fft<f32>>,
}

impl<'a> BankConvolver<'a> {
    pub fn new(bank: &'a FilterBank, width: usize, height: usize) -> Result<Self> {
        if bank.support > width || bank.support > height {
            return Err(Error::KernelTooLarge {
                kernel: bank.support,
                width,
                height,
            });
        }
        let pad = bank.support / 2;
        let nx = fft_size(width + 2 * pad);
        let ny = fft_size(height + 2 * pad);
        let mut planner = FftPlanner::new();
        Ok(Self {
            bank,
            width,
            height,
            pad,
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        })
    }

    fn scratch(&self) -> Vec<Complex<f32>> {
        let len = [&self.fwd_x, &self.fwd_y, &self.inv_x, &self.inv_y]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        vec![Complex::new(0.0, 0.0); len]
    }

    /// Forward 2-D transform of `input` (row-major, rows past `rows` zero)
    /// into `out`, column-major. `input` is overwritten.
    fn forward(&self, input: &mut [Complex<f32>], rows: usize, out: &mut [Complex<f32>], scratch: &mut [Complex<f32>]) {
        self.fwd_x.process_with_scratch(&mut input[..rows * self.nx], scratch);
        transpose::transpose(input, out, self.nx, self.ny);
        self.fwd_y.process_with_scratch(out, scratch);
    }

    /// Inverse of [`Self::forward`] into row-major `out`, unnormalized. Only
    /// the rows and columns that map back into the output are computed;
    /// `t` is overwritten.
    fn inverse(&self, t: &mut [Complex<f32>], out: &mut [Complex<f32>], scratch: &mut [Complex<f32>]) {
        // Every frequency row feeds the second pass, so only that one can be
        // limited to the rows inside the valid window.
        let first = 2 * self.pad;
        self.inv_y.process_with_scratch(t, scratch);
        transpose::transpose(t, out, self.ny, self.nx);
        self.inv_x.process_with_scratch(&mut out[first * self.nx..(first + self.height) * self.nx], scratch);
    }

    fn channel_spectrum(&self, channel: &GrayImage, scratch: &mut [Complex<f32>]) -> Vec<Complex<f32>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.nx * self.ny];
        let p = self.pad as isize;
        let rows = self.height + 2 * self.pad;
        for y in 0..rows {
            for x in 0..self.width + 2 * self.pad {
                let v = channel.get_clamped(x as isize - p, y as isize - p);
                buf[y * self.nx + x] = Complex::new(v as f32, 0.0);
            }
        }
        let mut out = vec![Complex::new(0.0, 0.0); self.nx * self.ny];
        self.forward(&mut buf, rows, &mut out, scratch);
        out
    }

    /// Spectrum of `a + i b` into `out`. Only the first `a.size` rows of
    /// `buf` are touched, so the rest must stay zero between calls.
    fn kernel_pair_spectrum(
        &self,
        a: &Kernel,
        b: Option<&Kernel>,
        buf: &mut [Complex<f32>],
        out: &mut [Complex<f32>],
        scratch: &mut [Complex<f32>],
    ) {
        let k = a.size;
        buf[..k * self.nx].fill(Complex::new(0.0, 0.0));
        for i in 0..k {
            for j in 0..k {
                let im = b.map_or(0.0, |b| b.at(i, j));
                buf[i * self.nx + j] = Complex::new(a.at(i, j) as f32, im as f32);
            }
        }
        self.forward(buf, k, out, scratch);
    }

    fn check(&self, channel: &GrayImage) -> Result<()> {
        if channel.width() != self.width || channel.height() != self.height {
            return Err(Error::InvalidImage(format!(
                "convolver built for {}x{}, got {}x{}",
                self.width,
                self.height,
                channel.width(),
                channel.height()
            )));
        }
        Ok(())
    }

    /// Runs every filter on every channel and hands each response to
    /// `sink(channel_index, filter_index, response)`.
    fn for_each_response(
        &self,
        channels: &[&GrayImage],
        mut sink: impl FnMut(usize, usize, Response<'_>),
    ) -> Result<()> {
        for c in channels {
            self.check(c)?;
        }
        let mut scratch = self.scratch();
        let spectra: Vec<_> = channels.iter().map(|c| self.channel_spectrum(c, &mut scratch)).collect();
        let scale = 1.0 / (self.nx * self.ny) as f64;
        let offset = 2 * self.pad;
        let filters = &self.bank.filters;
        let size = self.nx * self.ny;
        let zero = Complex::new(0.0, 0.0);
        let (mut kbuf, mut kspec, mut prod, mut full) = (vec![zero; size], vec![zero; size], vec![zero; size], vec![zero; size]);
        for start in (0..filters.len()).step_by(2) {
            let second = filters.get(start + 1).map(|f| &f.kernel);
            self.kernel_pair_spectrum(&filters[start].kernel, second, &mut kbuf, &mut kspec, &mut scratch);
            for (ci, spec) in spectra.iter().enumerate() {
                for ((p, a), b) in prod.iter_mut().zip(spec).zip(&kspec) {
                    *p = a * b;
                }
                self.inverse(&mut prod, &mut full, &mut scratch);
                let view = |imag| Response {
                    full: &full,
                    imag,
                    stride: self.nx,
                    offset,
                    width: self.width,
                    height: self.height,
                    scale,
                };
                sink(ci, start, view(false));
                if second.is_some() {
                    sink(ci, start + 1, view(true));
                }
            }
        }
        Ok(())
    }

    /// Per-filter responses of one channel, in bank order.
    pub fn responses(&self, channel: &GrayImage) -> Result<Vec<GrayImage>> {
        let mut out = vec![Vec::new(); self.bank.filters.len()];
        self.for_each_response(&[channel], |_, f, response| out[f] = response.to_vec())?;
        out.into_iter()
            .map(|d| GrayImage::new(self.width, self.height, d))
            .collect()
    }

    /// Pooled responses for each channel, without materializing every
    /// per-filter map at once.
    pub fn pooled(&self, channels: &[&GrayImage]) -> Result<Vec<ResponseStack>> {
        let n = self.width * self.height;
        let mut group_of = vec![0usize; self.bank.filters.len()];
        for (g, group) in self.bank.groups.iter().enumerate() {
            for &m in &group.members {
                group_of[m] = g;
            }
        }
        // Oriented groups accumulate unscaled magnitudes in f32; the scale
        // is positive, so it can be applied once after the maximum.
        let mut maps: Vec<Vec<Option<Vec<f64>>>> =
            vec![vec![None; self.bank.groups.len()]; channels.len()];
        let mut peaks: Vec<Vec<Option<Vec<f32>>>> =
            vec![vec![None; self.bank.groups.len()]; channels.len()];
        let mut scale = 0.0;
        self.for_each_response(channels, |c, f, response| {
            let g = group_of[f];
            if self.bank.filters[f].family.is_oriented() {
                scale = response.scale;
                response.max_abs_into(peaks[c][g].get_or_insert_with(|| vec![0.0; n]));
            } else {
                maps[c][g] = Some(response.to_vec());
            }
        })?;
        maps.into_iter()
            .zip(peaks)
            .enumerate()
            .map(|(c, (per_group, peaks))| {
                let maps = per_group
                    .into_iter()
                    .zip(peaks)
                    .map(|(m, p)| {
                        let data = m
                            .or_else(|| p.map(|p| p.into_iter().map(|v| f64::from(v) * scale).collect()))
                            .expect("every group filled");
                        GrayImage::new(self.width, self.height, data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ResponseStack { channel: c, maps })
            })
            .collect()
    }
}

/// One filter's response inside an unnormalized inverse transform: the real
/// or imaginary part of the valid window.
struct Response<'b> {
    full: &'b [Complex<f32>],
    imag: bool,
    stride: usize,
    offset: usize,
    width: usize,
    height: usize,
    scale: f64,
}

impl Response<'_> {
    fn row(&self, y: usize) -> &[Complex<f32>] {
        &self.full[(y + self.offset) * self.stride + self.offset..][..self.width]
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            let row = self.row(y);
            if self.imag {
                out.extend(row.iter().map(|z| f64::from(z.im) * self.scale));
            } else {
                out.extend(row.iter().map(|z| f64::from(z.re) * self.scale));
            }
        }
        out
    }

    /// Raises `peak` to the unscaled magnitude wherever it is larger.
    fn max_abs_into(&self, peak: &mut [f32]) {
        for (y, dst) in peak.chunks_exact_mut(self.width).enumerate() {
            let row = self.row(y);
            if self.imag {
                for (p, z) in dst.iter_mut().zip(row) {
                    *p = p.max(z.im.abs());
                }
            } else {
                for (p, z) in dst.iter_mut().zip(row) {
                    *p = p.max(z.re.abs());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gray(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_kernel(size: usize, seed: u64) -> Kernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Kernel::new(size, (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Convolution written from the definition, independent of `convolve`.
    fn naive_convolve(img: &GrayImage, k: &Kernel) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let half = k.half() as isize;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        // out(x) = sum_t k(t) img(x - t)
                        let kv = k.at((dy + half) as usize, (dx + half) as usize);
                        let sx = (x - dx).clamp(0, w - 1);
                        let sy = (y - dy).clamp(0, h - 1);
                        acc += kv * img.get(sx as usize, sy as usize);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn default_bank_has_48_filters() {
        let bank = FilterBank::default();
        assert_eq!(bank.len(), 48);
        assert_eq!(bank.groups().len(), 3 * 2 + 8 + 4);
        let count = |f| bank.filters().iter().filter(|x| x.family == f).count();
        assert_eq!(count(FilterFamily::FirstDerivative), 18);
        assert_eq!(count(FilterFamily::SecondDerivative), 18);
        assert_eq!(count(FilterFamily::LaplacianOfGaussian), 8);
        assert_eq!(count(FilterFamily::Gaussian), 4);
    }

    #[test]
    fn single_scale_bank_has_24_filters() {
        let bank = build_lm_filterbank(DEFAULT_SUPPORT, 1).unwrap();
        assert_eq!(bank.len(), 24);
        assert_eq!(bank.groups().len(), 2 + 12);
    }

    #[test]
    fn kernels_are_normalised() {
        let bank = FilterBank::default();
        for f in bank.filters() {
            let l1: f64 = f.kernel.data().iter().map(|v| v.abs()).sum();
            assert!((l1 - 1.0).abs() < 1e-12);
            if f.family == FilterFamily::Gaussian {
                assert!((f.kernel.sum() - 1.0).abs() < 1e-12);
            } else {
                assert!(f.kernel.sum().abs() < 1e-10, "{:?} sums to {}", f.family, f.kernel.sum());
            }
        }
    }

    #[test]
    fn orientations_evenly_spaced() {
        let bank = FilterBank::default();
        for g in bank.groups().iter().filter(|g| g.family.is_oriented()) {
            let angles: Vec<f64> = g.members.iter().map(|&m| bank.filters()[m].orientation.unwrap()).collect();
            for (k, a) in angles.iter().enumerate() {
                assert!((a - PI * k as f64 / 6.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_support() {
        assert!(build_lm_filterbank(48, 3).is_err());
        assert!(build_lm_filterbank(5, 3).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let img = random_gray(9, 7, 1);
        assert_eq!(convolve(&img, &Kernel::identity()).unwrap(), img);
    }

    #[test]
    fn zero_mean_kernel_annihilates_constants() {
        let img = GrayImage::filled(60, 60, 0.7).unwrap();
        let bank = FilterBank::default();
        let k = &bank.filters()[3].kernel;
        let out = convolve(&img, k).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn convolve_matches_naive_oracle() {
        let img = random_gray(16, 16, 2);
        let k = random_kernel(3, 9);
        let out = convolve(&img, &k).unwrap();
        for (a, b) in out.data().iter().zip(naive_convolve(&img, &k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_is_a_true_convolution() {
        // Shift kernel: a single 1 right of center moves content right.
        let mut data = vec![0.0; 9];
        data[5] = 1.0;
        let k = Kernel::new(3, data).unwrap();
        let img = random_gray(6, 5, 4);
        let out = convolve(&img, &k).unwrap();
        assert_eq!(out.get(3, 2), img.get(2, 2));
    }

    #[test]
    fn convolve_rejects_large_kernel() {
        let img = random_gray(10, 30, 1);
        assert!(matches!(convolve(&img, &random_kernel(11, 0)), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn fft_bank_matches_direct_convolution() {
        let bank = build_lm_filterbank(9, 1).unwrap();
        let img = random_gray(23, 17, 8);
        let conv = BankConvolver::new(&bank, 23, 17).unwrap();
        let fast = conv.responses(&img).unwrap();
        for (f, r) in bank.filters().iter().zip(&fast) {
            let direct = convolve(&img, &f.kernel).unwrap();
            for (a, b) in r.data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn pooled_matches_max_over_orientations() {
        let bank = build_lm_filterbank(11, 2).unwrap();
        let img = random_gray(30, 26, 5);
        let conv = BankConvolver::new(&bank, 30, 26).unwrap();
        let responses = conv.responses(&img).unwrap();
        let reference = max_over_orientations(&bank, &responses, 0).unwrap();
        let pooled = conv.pooled(&[&img]).unwrap().remove(0);
        assert_eq!(pooled.len(), reference.len());
        for (a, b) in pooled.maps.iter().zip(&reference.maps) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pooling_identical_orientations_returns_that_map() {
        let bank = build_lm_filterbank(7, 1).unwrap();
        let map = random_gray(8, 8, 3);
        let responses = vec![map.clone(); bank.len()];
        let stack = max_over_orientations(&bank, &responses, 0).unwrap();
        assert_eq!(stack.maps[0], map);
        assert_eq!(stack.maps[1], map);
    }

    #[test]
    fn pooling_picks_dominant_orientation() {
        let bank = build_lm_filterbank(7, 1).unwrap();
        let small = GrayImage::filled(4, 4, 0.1).unwrap();
        let big = GrayImage::filled(4, 4, -2.0).unwrap();
        let mut responses = vec![small; bank.len()];
        responses[2] = big;
        let stack = max_over_orientations(&bank, &responses, 0).unwrap();
        assert!(stack.maps[0].data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn pooling_reports_missing_group() {
        let bank = build_lm_filterbank(7, 1).unwrap();
        let responses = vec![GrayImage::filled(4, 4, 0.0).unwrap(); 5];
        assert!(matches!(
            max_over_orientations(&bank, &responses, 0),
            Err(Error::MissingResponses(_))
        ));
    }

    /// Smooth pattern of two oriented Gaussian blobs, in continuous
    /// coordinates centred on the origin.
    fn pattern(params: &[f64; 10], x: f64, y: f64) -> f64 {
        let blob = |p: &[f64]| {
            let (s, c) = p[4].sin_cos();
            let (dx, dy) = (x - p[0], y - p[1]);
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            (-(u * u) / (2.0 * p[2] * p[2]) - (v * v) / (2.0 * p[3] * p[3])).exp()
        };
        0.2 + 0.5 * blob(&params[..5]) + 0.3 * blob(&params[5..])
    }

    #[test]
    fn pooled_responses_are_rotation_invariant() {
        // The rotation centre is a fixed point of the pixel lattice, so the
        // pooled responses there must agree up to kernel discretization.
        let bank = build_lm_filterbank(25, 2).unwrap();
        let n = 61;
        let c = (n / 2) as f64;
        let (s, co) = (PI / 6.0).sin_cos();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut checked = 0;
        for _ in 0..12 {
            let mut p = [0.0; 10];
            for blob in p.chunks_exact_mut(5) {
                blob[0] = rng.gen_range(-6.0..6.0);
                blob[1] = rng.gen_range(-6.0..6.0);
                blob[2] = rng.gen_range(3.0..9.0);
                blob[3] = rng.gen_range(2.5..6.0);
                blob[4] = rng.gen_range(0.0..PI);
            }
            let original: Vec<f64> = (0..n * n)
                .map(|i| pattern(&p, (i % n) as f64 - c, (i / n) as f64 - c))
                .collect();
            let rotated: Vec<f64> = (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
                    pattern(&p, co * x + s * y, -s * x + co * y)
                })
                .collect();
            let a = GrayImage::new(n, n, original).unwrap();
            let b = GrayImage::new(n, n, rotated).unwrap();
            let conv = BankConvolver::new(&bank, n, n).unwrap();
            let pa = conv.pooled(&[&a]).unwrap().remove(0);
            let pb = conv.pooled(&[&b]).unwrap().remove(0);
            let centre = n / 2;
            for (g, group) in bank.groups().iter().enumerate() {
                // At sigma = 1 the unit-L1 oblique kernels differ from the
                // axis-aligned ones by ~15% in gain; the grid cannot resolve them.
                if group.family.is_oriented() && group.scale == 0 {
                    continue;
                }
                let peak = pa.maps[g].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let va = pa.maps[g].get(centre, centre);
                let vb = pb.maps[g].get(centre, centre);
                if va.abs() < 0.1 * peak {
                    continue;
                }
                let rel = (va - vb).abs() / va.abs();
                assert!(rel < 0.05, "{:?} scale {}: {va} vs {vb} ({rel})", group.family, group.scale);
                checked += 1;
            }
        }
        assert!(checked > 40, "only {checked} comparisons");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn convolution_is_linear(seed: u64, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let i1 = random_gray(12, 10, seed);
            let i2 = random_gray(12, 10, seed.wrapping_add(1));
            let k = random_kernel(5, seed.wrapping_add(2));
            let mix = GrayImage::new(12, 10, i1.data().iter().zip(i2.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = convolve(&mix, &k).unwrap();
            let r1 = convolve(&i1, &k).unwrap();
            let r2 = convolve(&i2, &k).unwrap();
            for ((l, x), y) in lhs.data().iter().zip(r1.data()).zip(r2.data()) {
                prop_assert!((l - (a * x + b * y)).abs() < 1e-10);
            }
        }

        #[test]
        fn pooled_dominates_each_orientation(seed: u64) {
            let bank = build_lm_filterbank(7, 1).unwrap();
            let img = random_gray(14, 12, seed);
            let conv = BankConvolver::new(&bank, 14, 12).unwrap();
            let responses = conv.responses(&img).unwrap();
            let stack = max_over_orientations(&bank, &responses, 0).unwrap();
            for (g, group) in bank.groups().iter().enumerate() {
                for &m in &group.members {
                    for (p, r) in stack.maps[g].data().iter().zip(responses[m].data()) {
                        if group.family.is_oriented() {
                            prop_assert!(*p >= r.abs());
                        } else {
                            prop_assert_eq!(*p, *r);
                        }
                    }
                }
            }
        }
    }
}
