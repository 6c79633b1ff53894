//! Fresnel-zone spiral phase masks.
//!
//! The pupil is split into `L` annular zones with normalized outer radii
//! `a_l = (l/L)^ε`. Zone `l` (1-based) carries the spiral phase
//! `((l-1)·N + 1)·φ`. [`step_phase`] evaluates the exact staircase; the tanh
//! relaxation in [`smooth_phase`] is differentiable in `N` and `ε`.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::axis_coords;

/// Parametric description of the mask. `n_peaks` is real-valued so that it
/// can be optimized; [`MaskSpec::rounded`] recovers the integer design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub n_peaks: f64,
    pub zones: u32,
    pub epsilon: f64,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    #[serde(default = "default_lambda_ref")]
    pub lambda_ref_m: f64,
    #[serde(default = "default_index")]
    pub refractive_index: f64,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_radius() -> f64 {
    2e-3
}

fn default_lambda_ref() -> f64 {
    DEFAULT_LAMBDA_REF
}

fn default_index() -> f64 {
    1.5
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

pub const DEFAULT_SHARPNESS: f64 = 100.0;
pub const DEFAULT_LAMBDA_REF: f64 = 536.67e-9;

impl MaskSpec {
    /// Mask for a 4 mm pupil at the 536.67 nm design wavelength, n = 1.5.
    pub fn new(n_peaks: f64, zones: u32, epsilon: f64) -> Self {
        Self {
            n_peaks,
            zones,
            epsilon,
            radius_m: default_radius(),
            lambda_ref_m: DEFAULT_LAMBDA_REF,
            refractive_index: default_index(),
            sharpness: DEFAULT_SHARPNESS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_peaks >= 1.0 && self.n_peaks.is_finite()) {
            return Err(Error::Config(format!("n_peaks must be >= 1, got {}", self.n_peaks)));
        }
        if self.zones < 1 {
            return Err(Error::Config("zones must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::Config(format!("sharpness must be positive, got {}", self.sharpness)));
        }
        if !(self.radius_m > 0.0 && self.lambda_ref_m > 0.0) {
            return Err(Error::Config("radius and reference wavelength must be positive".into()));
        }
        if !(self.refractive_index > 1.0) {
            return Err(Error::Config(format!("refractive index must exceed 1, got {}", self.refractive_index)));
        }
        Ok(())
    }

    /// Copy with `n_peaks` rounded to the nearest integer, for export.
    pub fn rounded(&self) -> Self {
        Self { n_peaks: self.n_peaks.round().max(1.0), ..*self }
    }

    /// Topological charge of zone `l` (1-based).
    pub fn charge(&self, zone: u32) -> f64 {
        (zone as f64 - 1.0) * self.n_peaks + 1.0
    }

    /// Normalized ring radii `a_0 = 0 < a_1 < ... < a_L = 1`.
    pub fn ring_radii(&self) -> Vec<f64> {
        let l = self.zones as f64;
        (0..=self.zones)
            .map(|k| if k == 0 { 0.0 } else { (k as f64 / l).powf(self.epsilon) })
            .collect()
    }

    /// `∂a_l/∂ε = a_l·ln(l/L)`, zero for the two end radii.
    fn ring_radii_deps(&self) -> Vec<f64> {
        let l = self.zones as f64;
        (0..=self.zones)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let t = k as f64 / l;
                    t.powf(self.epsilon) * t.ln()
                }
            })
            .collect()
    }

    /// Zone (1-based) containing normalized radius `rho`; `None` outside the mask.
    pub fn zone_of(&self, rho: f64) -> Option<u32> {
        if !(0.0..=1.0).contains(&rho) {
            return None;
        }
        let radii = self.ring_radii();
        for l in 1..=self.zones {
            if rho < radii[l as usize] {
                return Some(l);
            }
        }
        // rho == 1 belongs to the outermost zone
        Some(self.zones)
    }

    /// Distance in normalized radius from `rho` to the nearest ring boundary
    /// (including the center and the rim).
    pub fn boundary_distance(&self, rho: f64) -> f64 {
        self.ring_radii().iter().map(|a| (rho - a).abs()).fold(f64::INFINITY, f64::min)
    }

    /// Height range of the wrapped profile, `λ_ref / (n - 1)`.
    pub fn max_height(&self) -> f64 {
        self.lambda_ref_m / (self.refractive_index - 1.0)
    }
}

/// Exact staircase phase at normalized radius `rho` and azimuth `phi`.
pub fn step_phase(spec: &MaskSpec, rho: f64, phi: f64) -> f64 {
    match spec.zone_of(rho.clamp(0.0, 1.0)) {
        Some(l) => spec.charge(l) * phi,
        None => 0.0,
    }
}

/// Normalized polar coordinates of a square pupil grid.
#[derive(Debug, Clone)]
pub struct PolarGrid {
    /// `r / R`
    pub rho: Array2<f64>,
    /// `atan2(y, x)` in `(-π, π]`
    pub phi: Array2<f64>,
}

impl PolarGrid {
    pub fn new(n: usize, pitch: f64, radius: f64) -> Self {
        let c = axis_coords(n, pitch);
        let rho = Array2::from_shape_fn((n, n), |(i, j)| (c[i] * c[i] + c[j] * c[j]).sqrt() / radius);
        let phi = Array2::from_shape_fn((n, n), |(i, j)| c[i].atan2(c[j]));
        Self { rho, phi }
    }
}

fn ring_mask(s: f64, rho: f64, inner: f64, outer: f64) -> f64 {
    0.5 * ((s * (rho - inner)).tanh() - (s * (rho - outer)).tanh())
}

fn sech2(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

/// Smooth phase at one sample.
pub fn smooth_phase_at(spec: &MaskSpec, radii: &[f64], rho: f64, phi: f64) -> f64 {
    let s = spec.sharpness;
    (1..=spec.zones)
        .map(|l| spec.charge(l) * ring_mask(s, rho, radii[l as usize - 1], radii[l as usize]))
        .sum::<f64>()
        * phi
}

/// Tanh relaxation of [`step_phase`] over a grid of normalized polar coordinates.
pub fn smooth_phase(spec: &MaskSpec, rho: &Array2<f64>, phi: &Array2<f64>) -> Array2<f64> {
    let radii = spec.ring_radii();
    let mut out = Array2::zeros(rho.dim());
    Zip::from(&mut out).and(rho).and(phi).for_each(|o, &r, &p| *o = smooth_phase_at(spec, &radii, r, p));
    out
}

/// `Φ̃_a − Φ̃_b` at one sample for two specs with the same zone count and
/// sharpness. Each tanh pair is differenced as
/// `sinh(s(y−x)) / (cosh(s(ρ−x))·cosh(s(ρ−y)))`, so the result keeps full
/// relative precision when the specs are close (finite differences).
pub fn smooth_phase_delta(a: &MaskSpec, b: &MaskSpec, rho: f64, phi: f64) -> f64 {
    debug_assert!(a.zones == b.zones && a.sharpness == b.sharpness);
    let s = a.sharpness;
    let (ra, rb) = (a.ring_radii(), b.ring_radii());
    let t = |x: f64| (s * (rho - x)).tanh();
    let dt = |x: f64, y: f64| (s * (y - x)).sinh() / ((s * (rho - x)).cosh() * (s * (rho - y)).cosh());
    let mut acc = 0.0;
    for l in 1..=a.zones {
        let (lo, hi) = (l as usize - 1, l as usize);
        let mask_a = 0.5 * (t(ra[lo]) - t(ra[hi]));
        let dmask = 0.5 * (dt(ra[lo], rb[lo]) - dt(ra[hi], rb[hi]));
        acc += (a.charge(l) - b.charge(l)) * mask_a + b.charge(l) * dmask;
    }
    acc * phi
}

/// Analytic `(∂Φ̃/∂N, ∂Φ̃/∂ε)` of [`smooth_phase`].
pub fn phase_gradients(spec: &MaskSpec, rho: &Array2<f64>, phi: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let radii = spec.ring_radii();
    let dradii = spec.ring_radii_deps();
    let s = spec.sharpness;
    let mut d_n = Array2::zeros(rho.dim());
    let mut d_eps = Array2::zeros(rho.dim());
    Zip::from(&mut d_n).and(&mut d_eps).and(rho).and(phi).for_each(|gn, ge, &r, &p| {
        let mut sn = 0.0;
        let mut se = 0.0;
        for l in 1..=spec.zones {
            let (lo, hi) = (l as usize - 1, l as usize);
            let m = ring_mask(s, r, radii[lo], radii[hi]);
            sn += (l as f64 - 1.0) * m;
            // d/dε of ½(tanh(s(ρ-a_lo)) - tanh(s(ρ-a_hi)))
            let dm = 0.5 * s * (sech2(s * (r - radii[hi])) * dradii[hi] - sech2(s * (r - radii[lo])) * dradii[lo]);
            se += spec.charge(l) * dm;
        }
        *gn = sn * p;
        *ge = se * p;
    });
    (d_n, d_eps)
}

/// Wrap a phase into `[0, 2π)`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = v.rem_euclid(2.0 * PI);
    // rem_euclid may round up to exactly 2π for tiny negative inputs
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Smooth mask phase on a pupil grid, zero outside the mask radius.
pub fn mask_phase_grid(spec: &MaskSpec, n: usize, pitch: f64) -> Array2<f64> {
    let grid = PolarGrid::new(n, pitch, spec.radius_m);
    let mut phase = smooth_phase(spec, &grid.rho, &grid.phi);
    Zip::from(&mut phase).and(&grid.rho).for_each(|v, &r| {
        if r > 1.0 {
            *v = 0.0
        }
    });
    phase
}

/// Physical relief of the mask, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub data: Array2<f64>,
    pub pitch: f64,
}

impl HeightMap {
    /// Phase delay the relief imposes at `wavelength` (no dispersion).
    pub fn phase_at(&self, spec: &MaskSpec, wavelength: f64) -> Array2<f64> {
        let k = 2.0 * PI * (spec.refractive_index - 1.0) / wavelength;
        self.data.mapv(|h| k * h)
    }

    /// Snap heights onto `levels` equal steps of the wrapped range.
    pub fn quantized(&self, spec: &MaskSpec, levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config(format!("quantization needs at least 2 levels, got {levels}")));
        }
        let step = spec.max_height() / levels as f64;
        let top = (levels - 1) as f64;
        Ok(Self { data: self.data.mapv(|h| (h / step).floor().min(top) * step), pitch: self.pitch })
    }
}

/// Height map of the wrapped smooth phase, `λ_ref/(2π(n-1)) · (Φ̃ mod 2π)`.
pub fn height_map(spec: &MaskSpec, n: usize, pitch: f64) -> Result<HeightMap> {
    spec.validate()?;
    if pitch * n as f64 + 1e-15 < 2.0 * spec.radius_m {
        return Err(Error::Config(format!(
            "grid spans {} m, smaller than the {} m mask diameter",
            pitch * n as f64,
            2.0 * spec.radius_m
        )));
    }
    let phase = mask_phase_grid(spec, n, pitch);
    let grid = PolarGrid::new(n, pitch, spec.radius_m);
    let scale = spec.lambda_ref_m / (2.0 * PI * (spec.refractive_index - 1.0));
    let mut data = phase.mapv(|p| scale * wrap_phase(p));
    Zip::from(&mut data).and(&grid.rho).for_each(|h, &r| {
        if r > 1.0 {
            *h = 0.0
        }
    });
    Ok(HeightMap { data, pitch })
}
