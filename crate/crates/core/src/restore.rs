//! Non-blind restoration: edgetaper, per-plane Wiener deconvolution and
//! mask-guided recomposition, plus image quality metrics.

use ndarray::{s, Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{convolve_circular, otf, real_inverse, spectrum};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::render::stack_channels;
use crate::rpsf::PsfStack;
use crate::sensor::channels_of;

/// Below this `|H|²` an unregularized inverse is refused.
const SINGULAR_OTF: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WienerConfig {
    /// Constant noise-to-signal power ratio.
    pub nsr: f64,
    /// Edgetaper band in pixels; 0 disables the taper.
    pub taper_width: usize,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self { nsr: 1e-3, taper_width: 0 }
    }
}

impl WienerConfig {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if !(self.nsr >= 0.0 && self.nsr.is_finite()) {
            return Err(Error::Config(format!("nsr must be finite and >= 0, got {}", self.nsr)));
        }
        if self.taper_width > 0 && 2 * self.taper_width >= rows.min(cols) {
            return Err(Error::Config(format!(
                "taper width {} must be below half the image size {}x{}",
                self.taper_width, rows, cols
            )));
        }
        Ok(())
    }
}

/// Raised-cosine ramp: 0 on the image edge, 1 from `width` pixels inward.
fn taper_ramp(n: usize, width: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let d = i.min(n - 1 - i);
            if d >= width {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * d as f64 / width as f64).cos()
            }
        })
        .collect()
}

/// Single-channel edgetaper.
pub fn edgetaper_channel(img: &Array2<f64>, psf: &Array2<f64>, width: usize) -> Result<Array2<f64>> {
    let (h, w) = img.dim();
    let k = psf.nrows().max(psf.ncols());
    if width < k {
        return Err(Error::Config(format!("taper width {width} must be at least the kernel size {k}")));
    }
    if 2 * width >= h.min(w) {
        return Err(Error::Config(format!("taper width {width} too large for a {h}x{w} image")));
    }
    let blurred = convolve_circular(img, psf);
    let (wr, wc) = (taper_ramp(h, width), taper_ramp(w, width));
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let a = wr[i] * wc[j];
        a * img[[i, j]] + (1.0 - a) * blurred[[i, j]]
    }))
}

/// Blends each channel toward its circular blur inside a border band, so the
/// periodic extension assumed by the FFT has no jump at the frame edge.
pub fn edgetaper(img: &Array3<f64>, psf: &Array2<f64>, width: usize) -> Result<Array3<f64>> {
    let chans = channels_of(img).iter().map(|c| edgetaper_channel(c, psf, width)).collect::<Result<Vec<_>>>()?;
    stack_channels(&chans)
}

fn wiener_with_otf(img: &Array2<f64>, h: &Array2<Complex64>, nsr: f64, plan: &Fft2) -> Array2<f64> {
    let mut spec = spectrum(img, plan);
    Zip::from(&mut spec).and(h).for_each(|y, &hk| {
        *y = hk.conj() * *y / (hk.norm_sqr() + nsr);
    });
    real_inverse(spec, plan)
}

fn checked_otf(psf: &Array2<f64>, rows: usize, cols: usize, nsr: f64) -> Result<Array2<Complex64>> {
    if psf.nrows() > rows || psf.ncols() > cols {
        return Err(Error::Dimension(format!("kernel {:?} larger than image {rows}x{cols}", psf.dim())));
    }
    let h = otf(psf, rows, cols);
    if nsr == 0.0 && h.iter().any(|v| v.norm_sqr() < SINGULAR_OTF) {
        return Err(Error::Singular("transfer function vanishes and nsr is 0".into()));
    }
    Ok(h)
}

/// Single-channel Wiener filter with circular boundaries.
pub fn wiener_channel(img: &Array2<f64>, psf: &Array2<f64>, nsr: f64) -> Result<Array2<f64>> {
    if !(nsr >= 0.0) {
        return Err(Error::Config(format!("nsr must be >= 0, got {nsr}")));
    }
    let (rows, cols) = img.dim();
    let h = checked_otf(psf, rows, cols, nsr)?;
    Ok(wiener_with_otf(img, &h, nsr, &Fft2::new(rows, cols)))
}

/// `F⁻¹[conj(H)·Y / (|H|² + nsr)]` applied to every channel.
pub fn wiener_deconv(img: &Array3<f64>, psf: &Array2<f64>, nsr: f64) -> Result<Array3<f64>> {
    let chans = channels_of(img).iter().map(|c| wiener_channel(c, psf, nsr)).collect::<Result<Vec<_>>>()?;
    stack_channels(&chans)
}

/// Deconvolves every plane with its own kernel and keeps each result only
/// where that plane's mask is set. Output is clamped to `[0, 1]`.
pub fn restore_layered(img: &Array3<f64>, stack: &PsfStack, masks: &[Array2<f64>], cfg: &WienerConfig) -> Result<Array3<f64>> {
    let (h, w, c) = img.dim();
    cfg.validate(h, w)?;
    if masks.len() != stack.depth() {
        return Err(Error::Dimension(format!("{} masks for {} planes", masks.len(), stack.depth())));
    }
    if stack.channels() != c {
        return Err(Error::Dimension(format!("stack has {} channels, image {c}", stack.channels())));
    }
    if let Some(m) = masks.iter().find(|m| m.dim() != (h, w)) {
        return Err(Error::Dimension(format!("mask {:?} vs image {h}x{w}", m.dim())));
    }
    let plan = Fft2::new(h, w);
    let jobs: Vec<(usize, usize)> = (0..stack.depth())
        .filter(|&d| masks[d].iter().any(|&m| m != 0.0))
        .flat_map(|d| (0..c).map(move |ch| (d, ch)))
        .collect();
    let parts: Vec<Array2<f64>> = jobs
        .par_iter()
        .map(|&(d, ch)| {
            let psf = stack.kernel(d, ch).to_owned();
            let src = img.index_axis(Axis(2), ch).to_owned();
            let src = if cfg.taper_width > 0 { edgetaper_channel(&src, &psf, cfg.taper_width)? } else { src };
            let hk = checked_otf(&psf, h, w, cfg.nsr)?;
            Ok(wiener_with_otf(&src, &hk, cfg.nsr, &plan) * &masks[d])
        })
        .collect::<Result<_>>()?;
    let mut out = Array3::zeros((h, w, c));
    for (&(_, ch), part) in jobs.iter().zip(parts) {
        let mut dst = out.index_axis_mut(Axis(2), ch);
        dst += &part;
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Peak signal-to-noise ratio for unit peak; `+inf` for identical inputs.
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

fn check_same(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty image".into()));
    }
    Ok(())
}

pub fn rmse(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    check_same(a, b)?;
    let sse: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sse / a.len() as f64).sqrt())
}

pub fn psnr(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    let e = rmse(a, b)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -20.0 * e.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..k).map(|t| taps[t] * x[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean SSIM of two single-channel images on a unit dynamic range.
pub fn ssim_channel(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let g = gaussian_taps();
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&(a * a), &g);
    let bb = filter_valid(&(b * b), &g);
    let ab = filter_valid(&(a * b), &g);
    let mut total = 0.0;
    Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).for_each(|&ma, &mb, &saa, &sbb, &sab| {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    });
    Ok(total / mu_a.len() as f64)
}

/// SSIM averaged over channels.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    check_same(a, b)?;
    let c = a.dim().2;
    let mut sum = 0.0;
    for ch in 0..c {
        sum += ssim_channel(&a.index_axis(Axis(2), ch).to_owned(), &b.index_axis(Axis(2), ch).to_owned())?;
    }
    Ok(sum / c as f64)
}

pub fn metrics(a: &Array3<f64>, b: &Array3<f64>) -> Result<Metrics> {
    Ok(Metrics { psnr: psnr(a, b)?, ssim: ssim(a, b)?, rmse: rmse(a, b)? })
}

/// Crops `border` pixels from every side.
pub fn crop_border(img: &Array3<f64>, border: usize) -> Result<Array3<f64>> {
    let (h, w, _) = img.dim();
    if 2 * border >= h.min(w) {
        return Err(Error::Dimension(format!("border {border} leaves nothing of {h}x{w}")));
    }
    Ok(img.slice(s![border..h - border, border..w - border, ..]).to_owned())
}
