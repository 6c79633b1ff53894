//! Camera sensor model: Bayer mosaic, shot and read noise, ADC quantization
//! and Malvar–He–Cutler linear demosaicing.
//!
//! The stage order is fixed: mosaic → noise → quantize → demosaic.

use ndarray::{Array2, Array3, Axis};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::reflect_index;
use crate::error::{Error, Result};

/// 2x2 Bayer layout, named by the colors of the top-left quad in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;

impl CfaPattern {
    fn quad(self) -> [usize; 4] {
        match self {
            CfaPattern::Rggb => [RED, GREEN, GREEN, BLUE],
            CfaPattern::Bggr => [BLUE, GREEN, GREEN, RED],
            CfaPattern::Grbg => [GREEN, RED, BLUE, GREEN],
            CfaPattern::Gbrg => [GREEN, BLUE, RED, GREEN],
        }
    }

    /// Color sampled at `(row, col)`.
    pub fn channel_at(self, row: usize, col: usize) -> usize {
        self.quad()[(row % 2) * 2 + col % 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub cfa: CfaPattern,
    /// Read-noise standard deviation as a fraction of full scale.
    pub read_sigma: f64,
    /// Expected photon count at full scale; shot-noise variance is `v / photon_scale`.
    /// Infinite (no shot noise) is written as `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub photon_scale: f64,
    pub adc_bits: u32,
    pub seed: u64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { cfa: CfaPattern::Rggb, read_sigma: 0.01, photon_scale: 1000.0, adc_bits: 8, seed: 0 }
    }
}

impl SensorConfig {
    /// Expected noise variance of a pixel at `level`: read, shot and
    /// uniform quantization error.
    pub fn noise_variance(&self, level: f64) -> f64 {
        let shot = if self.photon_scale.is_finite() { level.max(0.0) / self.photon_scale } else { 0.0 };
        let step = 1.0 / ((1u64 << self.adc_bits.clamp(1, 16)) - 1) as f64;
        self.read_sigma * self.read_sigma + shot + step * step / 12.0
    }

    /// Noise-free, 16-bit configuration.
    pub fn ideal() -> Self {
        Self { read_sigma: 0.0, photon_scale: f64::INFINITY, adc_bits: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.read_sigma >= 0.0 && self.read_sigma.is_finite()) {
            return Err(Error::Config(format!("read_sigma must be >= 0, got {}", self.read_sigma)));
        }
        if !(self.photon_scale > 0.0) {
            return Err(Error::Config(format!("photon_scale must be > 0, got {}", self.photon_scale)));
        }
        if !(1..=16).contains(&self.adc_bits) {
            return Err(Error::Config(format!("adc_bits must lie in [1, 16], got {}", self.adc_bits)));
        }
        Ok(())
    }
}

/// Samples one color per pixel according to `cfa`.
pub fn mosaic(img: &Array3<f64>, cfa: CfaPattern) -> Result<Array2<f64>> {
    let (h, w, c) = img.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("mosaic needs even dimensions, got {h}x{w}")));
    }
    if c != 3 {
        return Err(Error::Dimension(format!("mosaic needs 3 channels, got {c}")));
    }
    Ok(Array2::from_shape_fn((h, w), |(i, j)| img[[i, j, cfa.channel_at(i, j)]]))
}

/// Standard-normal pair for pixel `(row, col)`, drawn from a fixed window of
/// the ChaCha8 keystream so the value depends only on `(seed, row, col)`.
fn normals_at(rng: &mut ChaCha8Rng, row: usize, col: usize) -> (f64, f64) {
    rng.set_word_pos((((row as u128) << 32) | col as u128) * 4);
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Adds shot and read noise without clamping. Shot noise is Gaussian with
/// variance `v / photon_scale`; read noise is `N(0, read_sigma²)`.
pub fn add_noise_unclamped(mosaic: &Array2<f64>, cfg: &SensorConfig) -> Array2<f64> {
    let (h, w) = mosaic.dim();
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.clone();
            (0..w)
                .map(|j| {
                    let v = mosaic[[i, j]];
                    let (z_shot, z_read) = normals_at(&mut rng, i, j);
                    let shot = (v.max(0.0) / cfg.photon_scale).sqrt();
                    v + shot * z_shot + cfg.read_sigma * z_read
                })
                .collect()
        })
        .collect();
    Array2::from_shape_vec((h, w), rows.concat()).expect("row lengths match")
}

/// Noisy mosaic, clamped to `[0, 1]`.
pub fn add_noise(mosaic: &Array2<f64>, cfg: &SensorConfig) -> Array2<f64> {
    add_noise_unclamped(mosaic, cfg).mapv(|v| v.clamp(0.0, 1.0))
}

/// Rounds to the nearest of `2^bits` levels spanning `[0, 1]`.
pub fn quantize(x: &Array2<f64>, bits: u32) -> Array2<f64> {
    let levels = ((1u64 << bits.clamp(1, 52)) - 1) as f64;
    x.mapv(|v| (v.clamp(0.0, 1.0) * levels).round() / levels)
}

// Malvar–He–Cutler filters, in units of 1/8, indexed [dy+2][dx+2].
const G_AT_RB: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [-1.0, 2.0, 4.0, 2.0, -1.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
];
/// Missing color at a green site whose row holds that color.
const RB_AT_G_ROW: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.5, 0.0, 0.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [-1.0, 4.0, 5.0, 4.0, -1.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.5, 0.0, 0.0],
];
/// Missing color at a green site whose column holds that color.
const RB_AT_G_COL: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, -1.0, 4.0, -1.0, 0.0],
    [0.5, 0.0, 5.0, 0.0, 0.5],
    [0.0, -1.0, 4.0, -1.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
];
/// Red at blue sites and blue at red sites.
const RB_AT_BR: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.5, 0.0, 0.0],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [-1.5, 0.0, 6.0, 0.0, -1.5],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [0.0, 0.0, -1.5, 0.0, 0.0],
];

/// Reconstructs full RGB from a Bayer mosaic, reflect-padded, clamped to `[0, 1]`.
pub fn demosaic(raw: &Array2<f64>, cfa: CfaPattern) -> Result<Array3<f64>> {
    let (h, w) = raw.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("demosaic needs even dimensions, got {h}x{w}")));
    }
    if h < 6 || w < 6 {
        return Err(Error::Dimension(format!("image {h}x{w} is smaller than the 5x5 filter support")));
    }
    let at = |i: isize, j: isize| raw[[reflect_index(i, h), reflect_index(j, w)]];
    let apply = |k: &[[f64; 5]; 5], i: usize, j: usize| {
        let mut acc = 0.0;
        for (dy, row) in k.iter().enumerate() {
            for (dx, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    acc += c * at(i as isize + dy as isize - 2, j as isize + dx as isize - 2);
                }
            }
        }
        acc / 8.0
    };
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let site = cfa.channel_at(i, j);
            for ch in 0..3 {
                let v = if ch == site {
                    raw[[i, j]]
                } else if ch == GREEN {
                    apply(&G_AT_RB, i, j)
                } else if site == GREEN {
                    if cfa.channel_at(i, j + 1) == ch {
                        apply(&RB_AT_G_ROW, i, j)
                    } else {
                        apply(&RB_AT_G_COL, i, j)
                    }
                } else {
                    apply(&RB_AT_BR, i, j)
                };
                out[[i, j, ch]] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Intermediate and final products of the sensor pipeline.
#[derive(Debug, Clone)]
pub struct SensorOutput {
    /// Noisy, clamped mosaic before the ADC.
    pub analog: Array2<f64>,
    /// Quantized mosaic.
    pub raw: Array2<f64>,
    /// Demosaiced RGB.
    pub rgb: Array3<f64>,
}

/// Runs the full pipeline on a linear RGB image.
pub fn simulate(img: &Array3<f64>, cfg: &SensorConfig) -> Result<SensorOutput> {
    cfg.validate()?;
    let m = mosaic(img, cfg.cfa)?;
    let analog = add_noise(&m, cfg);
    let raw = quantize(&analog, cfg.adc_bits);
    let rgb = demosaic(&raw, cfg.cfa)?;
    Ok(SensorOutput { analog, raw, rgb })
}

/// Splits an `H x W x C` image into channels.
pub fn channels_of(img: &Array3<f64>) -> Vec<Array2<f64>> {
    img.axis_iter(Axis(2)).map(|c| c.to_owned()).collect()
}
