//! Multi-scale structural similarity and the two-term render-vs-query loss.
//!
//! MS-SSIM follows the standard construction: an 11-tap Gaussian window
//! (σ = 1.5, valid convolution), `K1 = 0.01`, `K2 = 0.03`, dynamic range 1,
//! 2×2 mean pooling between scales, contrast·structure at every scale and
//! luminance only at the coarsest. Per-scale terms are clamped at zero before
//! the weighted geometric product, then channels are averaged.
//!
//! The query side of every comparison is fixed during pose search, so its
//! pyramid and windowed statistics are computed once ([`MsSsimTarget`]). On
//! the render side only the window footprint of the non-zero bounding box is
//! filtered; outside it the render is exactly zero and the per-pixel terms
//! reduce to functions of the query alone, summed with prefix tables.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BoundingBox, Image, Mask};
use crate::render::RenderOutput;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const K1: f32 = 0.01;
const K2: f32 = 0.03;
const C1: f32 = K1 * K1;
const C2: f32 = K2 * K2;

fn gaussian_window() -> [f32; WINDOW] {
    let mut g = [0.0f64; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| (v / s) as f32)
}

/// Largest scale count (at most 5) whose coarsest level still fits one window.
pub fn feasible_scales(width: usize, height: usize) -> usize {
    let m = width.min(height);
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| m >= (1 << (s - 1)) * WINDOW)
        .unwrap_or(0)
}

/// MS-SSIM with a fixed scale count; weights are the first `scales` standard
/// weights renormalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSsim {
    weights: Vec<f64>,
}

impl Default for MsSsim {
    fn default() -> Self {
        Self {
            weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl MsSsim {
    pub fn with_scales(scales: usize) -> Result<Self> {
        if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
            return Err(Error::invalid(format!("scale count must be in 1..=5, got {scales}")));
        }
        if scales == MS_SSIM_WEIGHTS.len() {
            return Ok(Self::default());
        }
        let w = &MS_SSIM_WEIGHTS[..scales];
        let s: f64 = w.iter().sum();
        Ok(Self {
            weights: w.iter().map(|v| v / s).collect(),
        })
    }

    /// Five scales when the image allows it, otherwise the largest feasible
    /// count with renormalized weights.
    pub fn for_size(width: usize, height: usize) -> Result<Self> {
        let s = feasible_scales(width, height);
        if s == 0 {
            return Err(Error::invalid(format!(
                "{width}x{height} is smaller than one {WINDOW}x{WINDOW} window"
            )));
        }
        if s < MS_SSIM_WEIGHTS.len() {
            debug!("ms-ssim: {width}x{height} supports only {s} scales, weights renormalized");
        }
        Self::with_scales(s)
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_size(&self, width: usize, height: usize) -> Result<()> {
        let need = (1 << (self.scales() - 1)) * WINDOW;
        if width.min(height) < need {
            return Err(Error::invalid(format!(
                "{width}x{height} is too small for {} scales (need {need} px)",
                self.scales()
            )));
        }
        Ok(())
    }

    /// Precomputes the pyramid and windowed statistics of the fixed image.
    pub fn target(&self, image: &Image) -> Result<MsSsimTarget> {
        self.check_size(image.width(), image.height())?;
        let g = gaussian_window();
        let channels = (0..image.channels())
            .map(|c| {
                let mut plane = image.channel_plane(c);
                let (mut w, mut h) = (image.width(), image.height());
                let mut levels = Vec::with_capacity(self.scales());
                for s in 0..self.scales() {
                    if s > 0 {
                        (plane, w, h) = downsample(&plane, w, h);
                    }
                    levels.push(TargetLevel::new(plane.clone(), w, h, &g));
                }
                levels
            })
            .collect();
        Ok(MsSsimTarget {
            ms: self.clone(),
            width: image.width(),
            height: image.height(),
            channels,
            window: g,
        })
    }

    pub fn compute(&self, a: &Image, b: &Image) -> Result<f64> {
        self.target(b)?.compare(a)
    }
}

/// Standard 5-scale MS-SSIM of two same-shape images.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    MsSsim::default().compute(a, b)
}

/// Per-channel, per-scale terms of one comparison, before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimTerms {
    /// `terms[c][s]`: mean contrast·structure for `s < last`, mean full SSIM at the last scale.
    pub terms: Vec<Vec<f64>>,
    pub value: f64,
}

struct TargetLevel {
    width: usize,
    height: usize,
    plane: Vec<f32>,
    mu: Vec<f32>,
    sigma: Vec<f32>,
    /// Summed-area tables of the per-pixel terms against an all-zero image.
    zero_cs: SummedArea,
    zero_ssim: SummedArea,
}

impl TargetLevel {
    fn new(plane: Vec<f32>, w: usize, h: usize, g: &[f32; WINDOW]) -> Self {
        let sq: Vec<f32> = plane.iter().map(|v| v * v).collect();
        let full = Region::full(w, h);
        let mut scratch = Scratch::default();
        let mut mu = Vec::new();
        let mut e2 = Vec::new();
        filter(&plane, w, &full, g, &mut scratch.tmp, &mut mu);
        filter(&sq, w, &full, g, &mut scratch.tmp, &mut e2);
        let sigma: Vec<f32> = mu.iter().zip(&e2).map(|(m, e)| e - m * m).collect();
        let (ow, oh) = (full.cols(), full.rows());
        let mut cs0 = Vec::with_capacity(ow * oh);
        let mut ssim0 = Vec::with_capacity(ow * oh);
        for (m, s) in mu.iter().zip(&sigma) {
            let cs = C2 / (s + C2);
            let l = C1 / (m * m + C1);
            cs0.push(cs as f64);
            ssim0.push((l * cs) as f64);
        }
        Self {
            width: w,
            height: h,
            plane,
            mu,
            sigma,
            zero_cs: SummedArea::new(&cs0, ow, oh),
            zero_ssim: SummedArea::new(&ssim0, ow, oh),
        }
    }
}

/// Fixed side of an MS-SSIM comparison.
pub struct MsSsimTarget {
    ms: MsSsim,
    width: usize,
    height: usize,
    channels: Vec<Vec<TargetLevel>>,
    window: [f32; WINDOW],
}

impl MsSsimTarget {
    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn compare(&self, image: &Image) -> Result<f64> {
        Ok(self.compare_terms(image)?.value)
    }

    pub fn compare_terms(&self, image: &Image) -> Result<MsSsimTerms> {
        self.compare_terms_within(image, None)
    }

    /// Like [`compare`](Self::compare) for an image known to be zero outside
    /// `bounds`.
    pub fn compare_within(&self, image: &Image, bounds: Option<BoundingBox>) -> Result<f64> {
        Ok(self.compare_terms_within(image, Some(bounds))?.value)
    }

    fn compare_terms_within(&self, image: &Image, hint: Option<Option<BoundingBox>>) -> Result<MsSsimTerms> {
        if image.width() != self.width || image.height() != self.height || image.channels() != self.channels.len() {
            return Err(Error::invalid(format!(
                "shape {}x{}x{} does not match {}x{}x{}",
                image.width(),
                image.height(),
                image.channels(),
                self.width,
                self.height,
                self.channels.len()
            )));
        }
        let area = match hint {
            None => Some(BoundingBox {
                x0: 0,
                y0: 0,
                x1: self.width - 1,
                y1: self.height - 1,
            }),
            Some(b) => b.filter(|b| b.x1 < self.width && b.y1 < self.height),
        };
        let mut terms = Vec::with_capacity(self.channels.len());
        let mut total = 0.0;
        let mut scratch = Scratch::default();
        for (c, levels) in self.channels.iter().enumerate() {
            let local = area.and_then(|a| Local::from_channel(image, c, &a));
            let t = self.channel_terms(local, levels, &mut scratch);
            let mut v = 1.0;
            for (term, weight) in t.iter().zip(self.ms.weights()) {
                v *= term.max(0.0).powf(*weight);
            }
            total += v;
            terms.push(t);
        }
        Ok(MsSsimTerms {
            terms,
            value: total / self.channels.len() as f64,
        })
    }

    fn channel_terms(&self, mut local: Option<Local>, levels: &[TargetLevel], scratch: &mut Scratch) -> Vec<f64> {
        let scales = levels.len();
        let mut out = Vec::with_capacity(scales);
        for (s, level) in levels.iter().enumerate() {
            let (w, h) = (level.width, level.height);
            if s > 0 {
                local = local.and_then(|l| l.downsampled(w, h));
            }
            let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
            let last = s + 1 == scales;
            let zero = if last { &level.zero_ssim } else { &level.zero_cs };
            let mut sum = zero.total();
            if let Some(l) = &local {
                if let Some(region) = l.bounds().footprint(ow, oh) {
                    sum -= zero.sum(&region);
                    sum += region_sum(l, level, &region, &self.window, last, scratch);
                }
            }
            out.push(sum / (ow * oh) as f64);
        }
        out
    }
}

/// One channel restricted to a box outside of which it is zero, in the
/// coordinates of its pyramid level.
struct Local {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Local {
    /// Tight non-zero box of channel `c` inside `area`, padded with zeros
    /// to even origin and extent so it halves without edge cases.
    fn from_channel(image: &Image, c: usize, area: &BoundingBox) -> Option<Self> {
        let channels = image.channels();
        let width = image.width();
        let data = image.data();
        let aw = area.x1 - area.x0 + 1;
        let mut plane = Vec::with_capacity(aw * (area.y1 - area.y0 + 1));
        for y in area.y0..=area.y1 {
            let row = &data[(y * width + area.x0) * channels..(y * width + area.x1 + 1) * channels];
            plane.extend(row.chunks_exact(channels).map(|p| p[c]));
        }
        let b = nonzero_bbox(&plane, aw, area.y1 - area.y0 + 1)?;
        let b = NonZero {
            x0: area.x0 + b.x0,
            y0: area.y0 + b.y0,
            x1: area.x0 + b.x1,
            y1: area.y0 + b.y1,
        };
        let dense = Self {
            x0: area.x0,
            y0: area.y0,
            w: aw,
            h: area.y1 - area.y0 + 1,
            data: plane,
        };
        Some(dense.crop(b))
    }

    /// Copies the box `b`, growing it to even origin and even size.
    fn crop(&self, b: NonZero) -> Self {
        let (x0, y0) = (b.x0 & !1, b.y0 & !1);
        let (x1, y1) = (b.x1 | 1, b.y1 | 1);
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let src = self.bounds();
        let mut data = vec![0.0f32; w * h];
        let (cx0, cx1) = (x0.max(src.x0), x1.min(src.x1));
        for y in y0.max(src.y0)..=y1.min(src.y1) {
            let from = (y - self.y0) * self.w;
            let to = (y - y0) * w;
            data[to + cx0 - x0..=to + cx1 - x0].copy_from_slice(&self.data[from + cx0 - self.x0..=from + cx1 - self.x0]);
        }
        Self { x0, y0, w, h, data }
    }

    fn bounds(&self) -> NonZero {
        NonZero {
            x0: self.x0,
            y0: self.y0,
            x1: self.x0 + self.w - 1,
            y1: self.y0 + self.h - 1,
        }
    }

    /// Next pyramid level of size `w x h`, with the same arithmetic as
    /// [`downsample`] so results match a full-plane pyramid bit for bit.
    fn downsampled(&self, w: usize, h: usize) -> Option<Self> {
        let (nx0, ny0) = (self.x0 / 2, self.y0 / 2);
        if nx0 >= w || ny0 >= h {
            return None;
        }
        // the box has even origin and size, so no zero padding is needed
        let nw = (self.w / 2).min(w - nx0);
        let nh = (self.h / 2).min(h - ny0);
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            let r0 = &self.data[2 * y * self.w..][..2 * nw];
            let r1 = &self.data[(2 * y + 1) * self.w..][..2 * nw];
            data.extend(
                r0.chunks_exact(2)
                    .zip(r1.chunks_exact(2))
                    .map(|(a, b)| (a[0] + a[1] + b[0] + b[1]) * 0.25),
            );
        }
        let plane = Self {
            x0: nx0,
            y0: ny0,
            w: nw,
            h: nh,
            data,
        };
        let b = nonzero_bbox(&plane.data, nw, nh)?;
        Some(plane.crop(NonZero {
            x0: nx0 + b.x0,
            y0: ny0 + b.y0,
            x1: nx0 + b.x1,
            y1: ny0 + b.y1,
        }))
    }

    /// The filter input covering output `region`, zero-padded from the box.
    fn window_into(&self, region: &Region, out: &mut Vec<f32>) {
        let (cols, rows) = (region.cols() + WINDOW - 1, region.rows() + WINDOW - 1);
        out.clear();
        out.resize(cols * rows, 0.0);
        let b = self.bounds();
        let (x_lo, x_hi) = (b.x0.max(region.x0), b.x1.min(region.x0 + cols - 1));
        let (y_lo, y_hi) = (b.y0.max(region.y0), b.y1.min(region.y0 + rows - 1));
        if x_lo > x_hi || y_lo > y_hi {
            return;
        }
        for y in y_lo..=y_hi {
            let src = &self.data[(y - self.y0) * self.w + x_lo - self.x0..(y - self.y0) * self.w + x_hi - self.x0 + 1];
            let dst = (y - region.y0) * cols + x_lo - region.x0;
            out[dst..dst + src.len()].copy_from_slice(src);
        }
    }
}

/// Buffers reused across the channels and scales of one comparison.
#[derive(Default)]
struct Scratch {
    input: Vec<f32>,
    tmp: Vec<f32>,
    x2: Vec<f32>,
    xy: Vec<f32>,
    mu: Vec<f32>,
    exx: Vec<f32>,
    exy: Vec<f32>,
    terms: Vec<f32>,
}

/// Per-pixel terms summed over `region` for a render plane against the target.
fn region_sum(
    x: &Local,
    level: &TargetLevel,
    region: &Region,
    g: &[f32; WINDOW],
    luminance: bool,
    scratch: &mut Scratch,
) -> f64 {
    x.window_into(region, &mut scratch.input);
    #[cfg(target_arch = "x86_64")]
    if simd::available() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { simd::region_sum(level, region, g, luminance, scratch) };
    }
    region_sum_impl(level, region, g, luminance, scratch)
}

/// Works on `s.input`, the padded window for `region`.
#[inline(always)]
fn region_sum_impl(level: &TargetLevel, region: &Region, g: &[f32; WINDOW], luminance: bool, s: &mut Scratch) -> f64 {
    let cols = region.cols();
    let rows = region.rows();
    let iw = cols + WINDOW - 1;
    let ih = rows + WINDOW - 1;
    s.x2.clear();
    s.x2.extend(s.input.iter().map(|v| v * v));
    s.xy.clear();
    for r in 0..ih {
        let y = &level.plane[(region.y0 + r) * level.width + region.x0..][..iw];
        let x = &s.input[r * iw..(r + 1) * iw];
        s.xy.extend(x.iter().zip(y).map(|(a, b)| a * b));
    }
    let inner = Region {
        x0: 0,
        y0: 0,
        x1: cols - 1,
        y1: rows - 1,
    };
    filter_impl(&s.input, iw, &inner, g, &mut s.tmp, &mut s.mu);
    filter_impl(&s.x2, iw, &inner, g, &mut s.tmp, &mut s.exx);
    filter_impl(&s.xy, iw, &inner, g, &mut s.tmp, &mut s.exy);
    let ow = level.width + 1 - WINDOW;
    s.terms.clear();
    s.terms.resize(cols, 0.0);
    let mut sum = 0.0f64;
    for r in 0..rows {
        let base = (region.y0 + r) * ow + region.x0;
        let mu_y = &level.mu[base..base + cols];
        let sigma_y = &level.sigma[base..base + cols];
        let row = r * cols..(r + 1) * cols;
        let (mu, exx, exy) = (&s.mu[row.clone()], &s.exx[row.clone()], &s.exy[row]);
        if luminance {
            pixel_terms::<true>(mu, exx, exy, mu_y, sigma_y, &mut s.terms);
        } else {
            pixel_terms::<false>(mu, exx, exy, mu_y, sigma_y, &mut s.terms);
        }
        sum += sum_f32(&s.terms);
    }
    sum
}

#[inline(always)]
fn pixel_terms<const LUMINANCE: bool>(
    mu: &[f32],
    exx: &[f32],
    exy: &[f32],
    mu_y: &[f32],
    sigma_y: &[f32],
    out: &mut [f32],
) {
    let n = out.len();
    let (mu, exx, exy, mu_y, sigma_y) = (&mu[..n], &exx[..n], &exy[..n], &mu_y[..n], &sigma_y[..n]);
    for j in 0..n {
        let (mx, my) = (mu[j], mu_y[j]);
        let sx = exx[j] - mx * mx;
        let sxy = exy[j] - mx * my;
        let cs = (2.0 * sxy + C2) / (sx + sigma_y[j] + C2);
        out[j] = if LUMINANCE {
            (2.0 * mx * my + C1) / (mx * mx + my * my + C1) * cs
        } else {
            cs
        };
    }
}

/// Sum in f64 over four interleaved partial sums.
#[inline(always)]
fn sum_f32(values: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = values.chunks_exact(4);
    for c in &mut chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += *v as f64;
        }
    }
    for (a, v) in acc.iter_mut().zip(chunks.remainder()) {
        *a += *v as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Wider vector units for the filtering hot loops. Plain multiplies and adds
/// are never fused, so results are bit-identical to the portable path.
#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;

    pub(super) fn available() -> bool {
        std::is_x86_feature_detected!("avx2")
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn region_sum(
        level: &TargetLevel,
        region: &Region,
        g: &[f32; WINDOW],
        luminance: bool,
        scratch: &mut Scratch,
    ) -> f64 {
        region_sum_impl(level, region, g, luminance, scratch)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn filter(
        input: &[f32],
        w: usize,
        region: &Region,
        g: &[f32; WINDOW],
        tmp: &mut Vec<f32>,
        out: &mut Vec<f32>,
    ) {
        filter_impl(input, w, region, g, tmp, out)
    }
}

/// Rectangle of valid-convolution output pixels, inclusive bounds.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Region {
    fn full(w: usize, h: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: w - WINDOW,
            y1: h - WINDOW,
        }
    }

    fn cols(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    fn rows(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Inclusive bounding box of non-zero input pixels.
#[derive(Debug, Clone, Copy)]
struct NonZero {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl NonZero {
    /// Output pixels whose window touches the box.
    fn footprint(self, ow: usize, oh: usize) -> Option<Region> {
        let r = Region {
            x0: self.x0.saturating_sub(WINDOW - 1),
            y0: self.y0.saturating_sub(WINDOW - 1),
            x1: self.x1.min(ow - 1),
            y1: self.y1.min(oh - 1),
        };
        (r.x0 <= r.x1 && r.y0 <= r.y1).then_some(r)
    }
}

fn nonzero_bbox(plane: &[f32], w: usize, h: usize) -> Option<NonZero> {
    let mut b: Option<NonZero> = None;
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let Some(first) = row.iter().position(|v| *v != 0.0) else {
            continue;
        };
        let last = row.iter().rposition(|v| *v != 0.0).unwrap();
        b = Some(match b {
            None => NonZero { x0: first, y0: y, x1: last, y1: y },
            Some(b) => NonZero {
                x0: b.x0.min(first),
                y0: b.y0,
                x1: b.x1.max(last),
                y1: y,
            },
        });
    }
    b
}

/// Separable Gaussian filter producing only `region` of the valid output
/// (row-major, `region.rows() x region.cols()`) into `out`.
fn filter(input: &[f32], w: usize, region: &Region, g: &[f32; WINDOW], tmp: &mut Vec<f32>, out: &mut Vec<f32>) {
    #[cfg(target_arch = "x86_64")]
    if simd::available() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { simd::filter(input, w, region, g, tmp, out) };
    }
    filter_impl(input, w, region, g, tmp, out)
}

#[inline(always)]
fn filter_impl(input: &[f32], w: usize, region: &Region, g: &[f32; WINDOW], tmp: &mut Vec<f32>, out: &mut Vec<f32>) {
    let cols = region.cols();
    let rows = region.rows();
    let tmp_rows = rows + WINDOW - 1;
    // every element is overwritten below, so stale contents are harmless
    tmp.resize(tmp_rows * cols, 0.0);
    out.resize(rows * cols, 0.0);
    for r in 0..tmp_rows {
        let src = &input[(region.y0 + r) * w + region.x0..];
        let taps: [&[f32]; WINDOW] = std::array::from_fn(|k| &src[k..k + cols]);
        convolve(&mut tmp[r * cols..(r + 1) * cols], g, &taps);
    }
    let tmp = &tmp[..];
    for r in 0..rows {
        let taps: [&[f32]; WINDOW] = std::array::from_fn(|k| &tmp[(r + k) * cols..(r + k + 1) * cols]);
        convolve(&mut out[r * cols..(r + 1) * cols], g, &taps);
    }
}

/// `dst[j] = sum_k g[k] * tap(k)[j]`, accumulated in tap order so every
/// lane width gives the same bits. Blocks of output stay in registers; a
/// ragged end is covered by one overlapping block, which recomputes a few
/// outputs with identical arithmetic.
#[inline(always)]
fn convolve(dst: &mut [f32], g: &[f32; WINDOW], taps: &[&[f32]; WINDOW]) {
    let n = dst.len();
    if n >= 32 {
        convolve_blocks::<32>(dst, g, taps);
    } else if n >= 8 {
        convolve_blocks::<8>(dst, g, taps);
    } else {
        for (j, d) in dst.iter_mut().enumerate() {
            let mut a = 0.0f32;
            for (&gk, tap) in g.iter().zip(taps) {
                a += gk * tap[j];
            }
            *d = a;
        }
    }
}

#[inline(always)]
fn convolve_blocks<const B: usize>(dst: &mut [f32], g: &[f32; WINDOW], taps: &[&[f32]; WINDOW]) {
    let n = dst.len();
    let mut j = 0;
    loop {
        let start = j.min(n - B);
        let mut acc = [0.0f32; B];
        for (&gk, tap) in g.iter().zip(taps) {
            let s: &[f32; B] = tap[start..start + B].try_into().unwrap();
            for (a, v) in acc.iter_mut().zip(s) {
                *a += gk * v;
            }
        }
        dst[start..start + B].copy_from_slice(&acc);
        if start + B == n {
            break;
        }
        j += B;
    }
}

/// 2×2 mean pooling; odd trailing rows/columns are dropped.
fn downsample(plane: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let r0 = &plane[2 * y * w..];
        let r1 = &plane[(2 * y + 1) * w..];
        for x in 0..nw {
            out.push((r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * 0.25);
        }
    }
    (out, nw, nh)
}

struct SummedArea {
    w: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(values: &[f64], w: usize, h: usize) -> Self {
        let mut table = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += values[y * w + x];
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, table }
    }

    fn total(&self) -> f64 {
        *self.table.last().unwrap()
    }

    fn sum(&self, r: &Region) -> f64 {
        let s = self.w + 1;
        let at = |x: usize, y: usize| self.table[y * s + x];
        at(r.x1 + 1, r.y1 + 1) - at(r.x0, r.y1 + 1) - at(r.x1 + 1, r.y0) + at(r.x0, r.y0)
    }
}

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum LossMode {
    #[default]
    #[serde(rename = "rgb+sem")]
    RgbSem,
    #[serde(rename = "rgb-only")]
    RgbOnly,
    #[serde(rename = "sem-only")]
    SemOnly,
}

impl LossMode {
    pub fn uses_rgb(self) -> bool {
        matches!(self, LossMode::RgbSem | LossMode::RgbOnly)
    }

    pub fn uses_semantics(self) -> bool {
        matches!(self, LossMode::RgbSem | LossMode::SemOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::RgbSem => "rgb+sem",
            LossMode::RgbOnly => "rgb-only",
            LossMode::SemOnly => "sem-only",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb+sem" => Ok(LossMode::RgbSem),
            "rgb-only" => Ok(LossMode::RgbOnly),
            "sem-only" => Ok(LossMode::SemOnly),
            other => Err(Error::Configuration(format!(
                "unknown loss mode {other:?} (expected rgb+sem, rgb-only or sem-only)"
            ))),
        }
    }
}

/// `total = l1 + l2` with `l1 = 1 - ms-ssim(rgb)` and `l2 = 1 - ms-ssim(semantic)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l1: f64, l2: f64) -> Self {
        Self { l1, l2, total: l1 + l2 }
    }
}

/// Query images with precomputed MS-SSIM statistics, backgrounds zeroed.
pub struct QueryTarget {
    mode: LossMode,
    rgb: Option<MsSsimTarget>,
    semantic: Option<MsSsimTarget>,
    width: usize,
    height: usize,
}

impl QueryTarget {
    /// `mask`, when given, zeroes the query background before comparison.
    pub fn new(rgb: &Image, semantic: Option<&Image>, mask: Option<&Mask>, mode: LossMode) -> Result<Self> {
        if mode.uses_semantics() && semantic.is_none() {
            return Err(Error::Configuration(format!(
                "loss mode {mode} needs a query semantic map"
            )));
        }
        let ms = MsSsim::for_size(rgb.width(), rgb.height())?;
        let prepare = |img: &Image| -> Result<MsSsimTarget> {
            if img.width() != rgb.width() || img.height() != rgb.height() {
                return Err(Error::invalid("query rgb and semantic shapes differ"));
            }
            let mut img = img.clone();
            if let Some(m) = mask {
                img.apply_mask(m)?;
            }
            ms.target(&img)
        };
        let rgb_t = if mode.uses_rgb() { Some(prepare(rgb)?) } else { None };
        let sem_t = match semantic {
            Some(s) if mode.uses_semantics() => Some(prepare(s)?),
            _ => None,
        };
        Ok(Self {
            mode,
            rgb: rgb_t,
            semantic: sem_t,
            width: rgb.width(),
            height: rgb.height(),
        })
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn evaluate(&self, render: &RenderOutput) -> Result<LossBreakdown> {
        let l1 = match &self.rgb {
            Some(t) => 1.0 - t.compare_within(render.rgb(), render.bounds())?,
            None => 0.0,
        };
        let l2 = match &self.semantic {
            Some(t) => 1.0 - t.compare_within(render.semantic(), render.bounds())?,
            None => 0.0,
        };
        Ok(LossBreakdown::new(l1, l2))
    }
}

/// One-shot loss of a render against the query.
pub fn pose_loss(
    render: &RenderOutput,
    query_rgb: &Image,
    query_sem: Option<&Image>,
    query_mask: Option<&Mask>,
    mode: LossMode,
) -> Result<LossBreakdown> {
    QueryTarget::new(query_rgb, query_sem, query_mask, mode)?.evaluate(render)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.gen::<f32>())
    }

    /// Independent oracle: dense 2D windowed statistics in f64 over every
    /// output pixel, no separability, no region tricks.
    fn naive_ms_ssim(a: &Image, b: &Image, scales: usize) -> (f64, Vec<Vec<f64>>) {
        let mut g1 = [0.0f64; WINDOW];
        for (i, v) in g1.iter_mut().enumerate() {
            let d = i as f64 - 5.0;
            *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        }
        let s: f64 = g1.iter().sum();
        g1.iter_mut().for_each(|v| *v /= s);
        let weights: Vec<f64> = {
            let w = &MS_SSIM_WEIGHTS[..scales];
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut value = 0.0;
        let mut all = Vec::new();
        for c in 0..a.channels() {
            let mut x: Vec<f64> = a.channel_plane(c).iter().map(|v| *v as f64).collect();
            let mut y: Vec<f64> = b.channel_plane(c).iter().map(|v| *v as f64).collect();
            let (mut w, mut h) = (a.width(), a.height());
            let mut terms = Vec::new();
            for s in 0..scales {
                if s > 0 {
                    let pool = |p: &[f64]| {
                        let mut o = Vec::new();
                        for yy in 0..h / 2 {
                            for xx in 0..w / 2 {
                                o.push(
                                    (p[2 * yy * w + 2 * xx]
                                        + p[2 * yy * w + 2 * xx + 1]
                                        + p[(2 * yy + 1) * w + 2 * xx]
                                        + p[(2 * yy + 1) * w + 2 * xx + 1])
                                        / 4.0,
                                );
                            }
                        }
                        o
                    };
                    x = pool(&x);
                    y = pool(&y);
                    w /= 2;
                    h /= 2;
                }
                let (ow, oh) = (w - 10, h - 10);
                let mut sum = 0.0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for ky in 0..WINDOW {
                            for kx in 0..WINDOW {
                                let g = g1[ky] * g1[kx];
                                let i = (oy + ky) * w + ox + kx;
                                mx += g * x[i];
                                my += g * y[i];
                                xx += g * x[i] * x[i];
                                yy += g * y[i] * y[i];
                                xy += g * x[i] * y[i];
                            }
                        }
                        let cs = (2.0 * (xy - mx * my) + c2) / ((xx - mx * mx) + (yy - my * my) + c2);
                        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                        sum += if s + 1 == scales { l * cs } else { cs };
                    }
                }
                terms.push(sum / (ow * oh) as f64);
            }
            let mut v = 1.0;
            for (t, wt) in terms.iter().zip(&weights) {
                v *= t.max(0.0).powf(*wt);
            }
            value += v;
            all.push(terms);
        }
        (value / a.channels() as f64, all)
    }

    fn gaussian_blur(img: &Image, sigma: f64) -> Image {
        let r = (3.0 * sigma).ceil() as i64;
        let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = k.iter().sum();
        let (w, h) = (img.width() as i64, img.height() as i64);
        let clamp = |v: i64, m: i64| v.clamp(0, m - 1) as usize;
        let tmp = Image::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
            (-r..=r)
                .map(|d| k[(d + r) as usize] * img.get(clamp(x as i64 + d, w), y, c) as f64)
                .sum::<f64>() as f32
                / s as f32
        });
        Image::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
            (-r..=r)
                .map(|d| k[(d + r) as usize] * tmp.get(x, clamp(y as i64 + d, h), c) as f64)
                .sum::<f64>() as f32
                / s as f32
        })
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| {
            let checker = ((x / 8 + y / 8) % 2) as f32;
            0.2 + 0.5 * checker + 0.3 * ((x + 2 * y + 17 * c) as f32 * 0.05).sin().abs()
        })
    }

    #[test]
    fn bounded_compare_matches_full_compare() {
        let t = MsSsim::default().target(&textured(200, 190)).unwrap();
        let blob = Image::from_fn(200, 190, 3, |x, y, c| {
            if (37..141).contains(&x) && (51..120).contains(&y) && (x + y + c) % 5 != 0 {
                0.1 + ((x * 3 + y * 7 + c) % 11) as f32 / 11.0
            } else {
                0.0
            }
        });
        let full = t.compare(&blob).unwrap();
        let tight = BoundingBox { x0: 37, y0: 51, x1: 140, y1: 119 };
        assert_eq!(t.compare_within(&blob, Some(tight)).unwrap(), full);
        let loose = BoundingBox { x0: 20, y0: 3, x1: 199, y1: 150 };
        assert_eq!(t.compare_within(&blob, Some(loose)).unwrap(), full);
        let empty = Image::zeros(200, 190, 3);
        assert_eq!(t.compare_within(&empty, None).unwrap(), t.compare(&empty).unwrap());
    }

    #[test]
    fn self_similarity_is_one() {
        let a = noise(180, 180, 3, 1);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
        let z = Image::zeros(180, 180, 3);
        assert!((ms_ssim(&z, &z).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn matches_naive_oracle() {
        let a = textured(64, 64);
        let mut b = noise(64, 64, 3, 9);
        // sparse second image exercises the region path
        for y in 0..64 {
            for x in 0..64 {
                if !(20..40).contains(&x) || !(10..50).contains(&y) {
                    b.pixel_mut(x, y).fill(0.0);
                }
            }
        }
        for scales in 1..=3 {
            let ms = MsSsim::with_scales(scales).unwrap();
            let fast = ms.target(&a).unwrap().compare_terms(&b).unwrap();
            let (slow, terms) = naive_ms_ssim(&b, &a, scales);
            assert!((fast.value - slow).abs() < 1e-5, "scales {scales}: {} vs {slow}", fast.value);
            for (ft, st) in fast.terms.iter().zip(&terms) {
                for (f, s) in ft.iter().zip(st) {
                    assert!((f - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn inverted_half_plane_has_negative_structure() {
        let x = Image::from_fn(176, 176, 1, |px, _, _| if px < 88 { 1.0 } else { 0.0 });
        let inv = Image::from_fn(176, 176, 1, |px, py, c| 1.0 - x.get(px, py, c));
        let terms = MsSsim::default().target(&inv).unwrap().compare_terms(&x).unwrap();
        // flat windows contribute +1 at every scale; once the window spans a
        // large part of the pooled image the edge windows dominate
        let t = &terms.terms[0];
        assert!(t.iter().any(|v| *v < 0.0), "terms {t:?}");
        assert!(terms.value < 0.5, "value {}", terms.value);
        // independent evaluation agrees on the coarse terms
        let (naive_value, naive) = naive_ms_ssim(&x, &inv, 5);
        for (f, n) in t.iter().zip(&naive[0]) {
            assert!((f - n).abs() < 1e-5, "{f} vs {n}");
        }
        assert!((terms.value - naive_value).abs() < 1e-6);
    }

    #[test]
    fn symmetric() {
        let a = textured(192, 180);
        let b = noise(192, 180, 3, 4);
        let ab = ms_ssim(&a, &b).unwrap();
        let ba = ms_ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-9, "{ab} vs {ba}");
    }

    #[test]
    fn monotone_under_blur() {
        let a = textured(200, 200);
        let values: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|s| ms_ssim(&a, &gaussian_blur(&a, *s)).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]), "{values:?}");
        assert!(values[0] < 1.0);
    }

    #[test]
    fn shape_and_size_errors() {
        let a = noise(180, 180, 3, 1);
        assert!(ms_ssim(&a, &noise(180, 181, 3, 1)).is_err());
        assert!(ms_ssim(&a, &noise(180, 180, 1, 1)).is_err());
        let small = noise(100, 100, 1, 2);
        assert!(ms_ssim(&small, &small).is_err());
        assert_eq!(feasible_scales(100, 100), 4);
        assert_eq!(feasible_scales(176, 300), 5);
        assert_eq!(feasible_scales(10, 10), 0);
        let ms = MsSsim::for_size(100, 100).unwrap();
        assert_eq!(ms.scales(), 4);
        assert!((ms.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((ms.compute(&small, &small).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn channel_permutation_invariance() {
        let a = textured(180, 180);
        let b = noise(180, 180, 3, 8);
        let perm = |img: &Image| Image::from_fn(180, 180, 3, |x, y, c| img.get(x, y, (c + 1) % 3));
        let v = ms_ssim(&a, &b).unwrap();
        let p = ms_ssim(&perm(&a), &perm(&b)).unwrap();
        assert!((v - p).abs() < 1e-12);
    }

    fn render_of(rgb: Image, sem: Image) -> RenderOutput {
        RenderOutput::from_images(rgb, sem).unwrap()
    }

    #[test]
    fn loss_modes() {
        let q = textured(180, 180);
        let s = noise(180, 180, 3, 5);
        let same = render_of(q.clone(), s.clone());
        let l = pose_loss(&same, &q, Some(&s), None, LossMode::RgbSem).unwrap();
        assert!(l.total.abs() < 1e-9);
        assert_eq!(l.total, l.l1 + l.l2);

        let other = render_of(q.clone(), noise(180, 180, 3, 6));
        let l = pose_loss(&other, &q, Some(&s), None, LossMode::RgbOnly).unwrap();
        assert_eq!(l.l2, 0.0);
        assert!(l.l1.abs() < 1e-9);
        let l = pose_loss(&other, &q, Some(&s), None, LossMode::SemOnly).unwrap();
        assert_eq!(l.l1, 0.0);
        assert!(l.l2 > 0.1);
        for t in [l.l1, l.l2] {
            assert!((0.0..=2.0).contains(&t));
        }

        let err = pose_loss(&same, &q, None, None, LossMode::RgbSem).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        assert!("rgb-only".parse::<LossMode>().is_ok());
        assert!("rgb".parse::<LossMode>().is_err());
    }

    #[test]
    fn empty_render_scores_worse_than_aligned() {
        let mask = Mask::from_fn(180, 180, |x, y| (40..140).contains(&x) && (30..150).contains(&y));
        let mut q = textured(180, 180);
        q.apply_mask(&mask).unwrap();
        let aligned = render_of(q.clone(), Image::zeros(180, 180, 3));
        let empty = render_of(Image::zeros(180, 180, 3), Image::zeros(180, 180, 3));
        let a = pose_loss(&aligned, &q, None, Some(&mask), LossMode::RgbOnly).unwrap();
        let e = pose_loss(&empty, &q, None, Some(&mask), LossMode::RgbOnly).unwrap();
        assert!(a.total < 1e-9);
        assert!(e.total > 0.5, "empty render loss {}", e.total);
    }

    #[test]
    fn query_mask_zeroes_background() {
        let mask = Mask::from_fn(180, 180, |x, _| x < 90);
        let q = textured(180, 180);
        let mut expected = q.clone();
        expected.apply_mask(&mask).unwrap();
        let r = render_of(expected, Image::zeros(180, 180, 3));
        let l = pose_loss(&r, &q, None, Some(&mask), LossMode::RgbOnly).unwrap();
        assert!(l.total.abs() < 1e-9);
    }
}
