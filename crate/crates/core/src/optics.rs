//! Scalar wave optics: thin-lens defocus, generalized pupil, Fourier-route PSF
//! and Fresnel transfer-function propagation.
//!
//! Grid convention: sample `(i, j)` of an `n x n` grid sits at
//! `x = (j - n/2)·pitch`, `y = (i - n/2)·pitch`, so the optical axis is the
//! sample `(n/2, n/2)`. Frequency-domain outputs are shifted to the same center.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fftfreq, fftshift, Fft2};

/// Energy fraction a cropped kernel may drop before a warning is logged.
pub const CROP_LOSS_WARN: f64 = 0.02;

/// Complex wavefront sampled on a square-pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    data: Array2<Complex64>,
    pitch: f64,
    wavelength: f64,
}

impl ComplexField {
    pub fn new(data: Array2<Complex64>, pitch: f64, wavelength: f64) -> Result<Self> {
        let (h, w) = data.dim();
        if h % 2 != 0 || w % 2 != 0 || h < 16 || w < 16 {
            return Err(Error::Config(format!("field grid must be even and at least 16x16, got {h}x{w}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::Config(format!("pitch must be positive, got {pitch}")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Config(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self { data, pitch, wavelength })
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// Total power `Σ|U|²`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm_sqr())
    }
}

/// Thin-lens camera. The sensor distance is derived from the focus distance
/// and may be omitted in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFields")]
pub struct CameraConfig {
    pub focal_length_m: f64,
    pub aperture_diameter_m: f64,
    pub focus_distance_m: f64,
    pub sensor_distance_m: f64,
    /// RGB primaries, one wavelength per channel.
    pub wavelengths_m: Vec<f64>,
    pub refractive_index: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFields {
    focal_length_m: f64,
    aperture_diameter_m: f64,
    focus_distance_m: f64,
    #[serde(default)]
    sensor_distance_m: Option<f64>,
    wavelengths_m: Vec<f64>,
    refractive_index: f64,
}

impl TryFrom<CameraFields> for CameraConfig {
    type Error = Error;

    fn try_from(f: CameraFields) -> Result<Self> {
        let cam = Self::new(f.focal_length_m, f.aperture_diameter_m, f.focus_distance_m, f.wavelengths_m, f.refractive_index)?;
        match f.sensor_distance_m {
            Some(z_i) => {
                let given = Self { sensor_distance_m: z_i, ..cam };
                given.validate()?;
                Ok(given)
            }
            None => Ok(cam),
        }
    }
}

impl CameraConfig {
    pub fn new(
        focal_length_m: f64,
        aperture_diameter_m: f64,
        focus_distance_m: f64,
        wavelengths_m: Vec<f64>,
        refractive_index: f64,
    ) -> Result<Self> {
        if !(focal_length_m > 0.0 && aperture_diameter_m > 0.0 && focus_distance_m > 0.0) {
            return Err(Error::Config("focal length, aperture and focus distance must be positive".into()));
        }
        if focus_distance_m <= focal_length_m {
            return Err(Error::Config(format!(
                "focus distance {focus_distance_m} m must exceed the focal length {focal_length_m} m"
            )));
        }
        let sensor_distance_m = 1.0 / (1.0 / focal_length_m - 1.0 / focus_distance_m);
        let cam = Self {
            focal_length_m,
            aperture_diameter_m,
            focus_distance_m,
            sensor_distance_m,
            wavelengths_m,
            refractive_index,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// 16 mm lens, 4 mm aperture, focused at 5 m, RGB primaries 610/536.67/470 nm, n = 1.5.
    pub fn nyuv2() -> Self {
        Self::new(16e-3, 4e-3, 5.0, vec![610e-9, 536.67e-9, 470e-9], 1.5).expect("static camera is valid")
    }

    pub fn pupil_radius(&self) -> f64 {
        self.aperture_diameter_m / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.focal_length_m, self.aperture_diameter_m, self.focus_distance_m, self.sensor_distance_m];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("camera distances must be positive and finite".into()));
        }
        if !(self.refractive_index > 1.0) {
            return Err(Error::Config(format!("refractive index must exceed 1, got {}", self.refractive_index)));
        }
        if self.wavelengths_m.is_empty() || self.wavelengths_m.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("wavelengths must be non-empty and positive".into()));
        }
        let lhs = 1.0 / self.focus_distance_m + 1.0 / self.sensor_distance_m;
        let rhs = 1.0 / self.focal_length_m;
        if ((lhs - rhs) / rhs).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "thin-lens equation violated: 1/z_o + 1/z_i = {lhs}, 1/f = {rhs}"
            )));
        }
        Ok(())
    }
}

/// Quadratic phase error at the pupil rim, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefocusSpec {
    pub psi: f64,
}

impl DefocusSpec {
    pub const IN_FOCUS: DefocusSpec = DefocusSpec { psi: 0.0 };
}

/// Defocus of an object at distance `z_o` (may be `f64::INFINITY`).
/// Positive for objects nearer than the focus plane.
pub fn defocus_from_distance(cam: &CameraConfig, z_o: f64, wavelength: f64) -> Result<DefocusSpec> {
    if !(z_o > 0.0) {
        return Err(Error::Domain(format!("object distance must be positive, got {z_o}")));
    }
    let r = cam.pupil_radius();
    // 1/z_o + 1/z_i - 1/f, written as the difference from the focus plane so
    // that z_o == focus gives exactly zero.
    let vergence = 1.0 / z_o - 1.0 / cam.focus_distance_m;
    let psi = PI * r * r / wavelength * vergence;
    if !psi.is_finite() {
        return Err(Error::Domain(format!("non-finite defocus for z_o = {z_o}")));
    }
    Ok(DefocusSpec { psi })
}

/// Inverse of [`defocus_from_distance`]. Fails for defocus values that would
/// place the object beyond infinity.
pub fn distance_from_defocus(cam: &CameraConfig, psi: f64, wavelength: f64) -> Result<f64> {
    let r = cam.pupil_radius();
    let inv = psi * wavelength / (PI * r * r) + 1.0 / cam.focus_distance_m;
    if !(inv > 0.0) {
        return Err(Error::Domain(format!("defocus {psi} has no object distance in front of the lens")));
    }
    Ok(1.0 / inv)
}

/// Pupil-plane grid layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilSampling {
    /// Grid edge length in samples.
    pub grid: usize,
    /// Samples spanned by the aperture diameter.
    pub aperture_samples: usize,
}

impl Default for PupilSampling {
    fn default() -> Self {
        Self { grid: 512, aperture_samples: 400 }
    }
}

impl PupilSampling {
    /// Same sampling ratio on a smaller grid (used by the optimizer).
    pub fn scaled(grid: usize) -> Self {
        let d = Self::default();
        Self { grid, aperture_samples: grid * d.aperture_samples / d.grid }
    }

    pub fn pitch(&self, aperture_diameter: f64) -> f64 {
        aperture_diameter / self.aperture_samples as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid % 2 != 0 || self.grid < 16 {
            return Err(Error::Config(format!("pupil grid must be even and >= 16, got {}", self.grid)));
        }
        if self.aperture_samples == 0 || self.aperture_samples > self.grid {
            return Err(Error::Config(format!(
                "aperture spans {} samples, grid has {}",
                self.aperture_samples, self.grid
            )));
        }
        Ok(())
    }
}

/// Physical coordinate of each sample along one axis.
pub fn axis_coords(n: usize, pitch: f64) -> Vec<f64> {
    (0..n).map(|j| (j as f64 - (n / 2) as f64) * pitch).collect()
}

/// `x² + y²` on the grid.
pub fn radius_squared(n: usize, pitch: f64) -> Array2<f64> {
    let c = axis_coords(n, pitch);
    Array2::from_shape_fn((n, n), |(i, j)| c[i] * c[i] + c[j] * c[j])
}

/// Binary disc of the given radius (rim samples included).
pub fn circular_aperture(n: usize, pitch: f64, radius: f64) -> Array2<f64> {
    // tolerance so that samples exactly on the rim survive rounding of pitch
    let lim = radius * radius * (1.0 + 1e-12);
    radius_squared(n, pitch).mapv(|r2| if r2 <= lim { 1.0 } else { 0.0 })
}

/// Thin convex lens phase, with the thickness offset chosen so the thinnest
/// point on the grid has zero height.
pub fn lens_phase(cam: &CameraConfig, n: usize, pitch: f64, wavelength: f64) -> Result<Array2<f64>> {
    if pitch * n as f64 + 1e-15 < cam.aperture_diameter_m {
        return Err(Error::Config(format!(
            "grid spans {} m, smaller than the {} m aperture",
            pitch * n as f64,
            cam.aperture_diameter_m
        )));
    }
    let nm1 = cam.refractive_index - 1.0;
    let r2 = radius_squared(n, pitch);
    let sag = r2.mapv(|v| v / (2.0 * cam.focal_length_m * nm1));
    let h0 = sag.iter().cloned().fold(0.0, f64::max);
    let k = 2.0 * PI * nm1 / wavelength;
    Ok(sag.mapv(|s| k * (h0 - s)))
}

/// Generalized pupil `A·exp(i(Φ + Ψ(x²+y²)/R²))`.
pub fn pupil_function(
    aperture: &Array2<f64>,
    phase: &Array2<f64>,
    defocus: DefocusSpec,
    radius: f64,
    pitch: f64,
    wavelength: f64,
) -> Result<ComplexField> {
    let (h, w) = aperture.dim();
    if phase.dim() != (h, w) {
        return Err(Error::Dimension(format!("aperture {:?} vs phase {:?}", aperture.dim(), phase.dim())));
    }
    if h != w {
        return Err(Error::Dimension(format!("pupil grid must be square, got {h}x{w}")));
    }
    let r2 = radius_squared(h, pitch);
    let inv_r2 = 1.0 / (radius * radius);
    let mut data = Array2::<Complex64>::zeros((h, w));
    ndarray::Zip::from(&mut data).and(aperture).and(phase).and(&r2).for_each(|p, &a, &phi, &rr| {
        if a != 0.0 {
            *p = Complex64::from_polar(a, phi + defocus.psi * rr * inv_r2);
        }
    });
    ComplexField::new(data, pitch, wavelength)
}

/// Uncropped, centered `|F(P)|²`, with negative round-off clamped to zero.
pub fn psf_intensity(pupil: &ComplexField) -> Result<Array2<f64>> {
    if pupil.energy() <= 0.0 {
        return Err(Error::Degenerate("pupil carries no energy".into()));
    }
    let (h, w) = pupil.dim();
    let mut buf = pupil.data().clone();
    Fft2::new(h, w).forward(&mut buf);
    Ok(fftshift(&buf.mapv(|v| v.norm_sqr().max(0.0))))
}

/// Crops an odd `size x size` window around the grid center and renormalizes
/// it to unit mass. Returns the kernel and the energy fraction retained.
pub fn crop_normalize(intensity: &Array2<f64>, size: usize) -> Result<(Array2<f64>, f64)> {
    let (h, w) = intensity.dim();
    if size % 2 == 0 || size == 0 {
        return Err(Error::Config(format!("kernel size must be odd, got {size}")));
    }
    if size > h || size > w {
        return Err(Error::Config(format!("kernel size {size} exceeds grid {h}x{w}")));
    }
    let total: f64 = intensity.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("intensity has no energy".into()));
    }
    let (r0, c0) = (h / 2 - size / 2, w / 2 - size / 2);
    let mut crop = intensity.slice(s![r0..r0 + size, c0..c0 + size]).mapv(|v| v.max(0.0));
    let kept: f64 = crop.sum();
    if !(kept > 0.0) {
        return Err(Error::Degenerate("cropped kernel has no energy".into()));
    }
    crop.mapv_inplace(|v| v / kept);
    Ok((crop, kept / total))
}

/// Unit-mass PSF of `pupil`, cropped to `out_size` (odd).
pub fn psf_from_pupil(pupil: &ComplexField, out_size: usize) -> Result<Array2<f64>> {
    let full = psf_intensity(pupil)?;
    let (kernel, retained) = crop_normalize(&full, out_size)?;
    if 1.0 - retained > CROP_LOSS_WARN {
        log::warn!(
            "{out_size}x{out_size} crop keeps {:.2}% of the PSF energy",
            100.0 * retained
        );
    }
    Ok(kernel)
}

/// Largest propagation distance the transfer function can represent without
/// aliasing its chirp: `pitch² · n / λ`.
pub fn max_fresnel_distance(n: usize, pitch: f64, wavelength: f64) -> f64 {
    pitch * pitch * n as f64 / wavelength
}

/// Pitch at which the transfer-function and single-FFT Fresnel methods coincide.
pub fn critical_pitch(n: usize, wavelength: f64, z: f64) -> f64 {
    (wavelength * z / n as f64).sqrt()
}

fn check_fresnel_sampling(field: &ComplexField, z: f64) -> Result<()> {
    let n = field.dim().0.min(field.dim().1) as f64;
    let lhs = field.pitch() * field.pitch();
    let rhs = field.wavelength() * z.abs() / n;
    // relative slack covers the round-off of a critically sampled grid
    if lhs < rhs * (1.0 - 1e-9) {
        return Err(Error::Sampling(format!(
            "Fresnel kernel undersampled: pitch² = {lhs:e} m² < λz/N = {rhs:e} m²"
        )));
    }
    Ok(())
}

fn transfer_apply(field: &ComplexField, z: f64, conjugate: bool) -> Result<ComplexField> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Domain(format!("propagation distance must be positive, got {z}")));
    }
    check_fresnel_sampling(field, z)?;
    let (h, w) = field.dim();
    let lambda = field.wavelength();
    let fy = fftfreq(h, field.pitch());
    let fx = fftfreq(w, field.pitch());
    let k = 2.0 * PI / lambda;
    let sign = if conjugate { -1.0 } else { 1.0 };
    let plan = Fft2::new(h, w);
    let mut buf = field.data().clone();
    plan.forward(&mut buf);
    for ((i, j), v) in buf.indexed_iter_mut() {
        let f2 = fx[j] * fx[j] + fy[i] * fy[i];
        let phase = k * z - PI * lambda * z * f2;
        *v *= Complex64::from_polar(1.0, sign * phase);
    }
    plan.inverse(&mut buf);
    ComplexField::new(buf, field.pitch(), lambda)
}

/// Fresnel propagation over `z` by the transfer-function method,
/// `H(fx, fy) = exp(ikz)·exp(-iπλz(fx² + fy²))`. The output keeps the input
/// sampling and the step is unitary.
pub fn fresnel_propagate(field: &ComplexField, z: f64) -> Result<ComplexField> {
    transfer_apply(field, z, false)
}

/// Undoes [`fresnel_propagate`] over the same distance (conjugate transfer function).
pub fn fresnel_backpropagate(field: &ComplexField, z: f64) -> Result<ComplexField> {
    transfer_apply(field, z, true)
}

/// Phase of a spherical wave from an on-axis point at distance `z_o`,
/// in the paraxial limit: `π r² / (λ z_o)`.
pub fn point_source_phase(n: usize, pitch: f64, wavelength: f64, z_o: f64) -> Array2<f64> {
    let c = PI / (wavelength * z_o);
    radius_squared(n, pitch).mapv(|r2| c * r2)
}

/// PSF by explicit Fresnel propagation: a point source at `z_o` illuminates the
/// aperture, picks up the lens and `element_phase`, and propagates to the
/// sensor plane. On a critically sampled grid (see [`critical_pitch`]) this
/// reproduces the Fourier route exactly.
pub fn fresnel_route_psf(
    cam: &CameraConfig,
    aperture: &Array2<f64>,
    element_phase: &Array2<f64>,
    z_o: f64,
    wavelength: f64,
    pitch: f64,
    out_size: usize,
) -> Result<Array2<f64>> {
    let n = aperture.dim().0;
    let lens = lens_phase(cam, n, pitch, wavelength)?;
    let source = point_source_phase(n, pitch, wavelength, z_o);
    let phase = &(&lens + &source) + element_phase;
    let field = pupil_function(aperture, &phase, DefocusSpec::IN_FOCUS, cam.pupil_radius(), pitch, wavelength)?;
    let sensor = fresnel_propagate(&field, cam.sensor_distance_m)?;
    let (kernel, _) = crop_normalize(&sensor.intensity(), out_size)?;
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraConfig {
        CameraConfig::nyuv2()
    }

    #[test]
    fn thin_lens_is_consistent() {
        let c = cam();
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.sensor_distance_m *= 1.001;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn in_focus_has_zero_defocus() {
        let c = cam();
        assert_eq!(defocus_from_distance(&c, c.focus_distance_m, 536.67e-9).unwrap().psi, 0.0);
    }

    #[test]
    fn defocus_sign_and_infinity_limit() {
        let c = cam();
        let lambda = 536.67e-9;
        assert!(defocus_from_distance(&c, 2.0, lambda).unwrap().psi > 0.0);
        assert!(defocus_from_distance(&c, 9.0, lambda).unwrap().psi < 0.0);
        let inf = defocus_from_distance(&c, f64::INFINITY, lambda).unwrap().psi;
        let r = c.pupil_radius();
        let expect = PI * r * r / lambda * (1.0 / c.sensor_distance_m - 1.0 / c.focal_length_m);
        assert!((inf - expect).abs() <= 1e-10 * expect.abs());
    }

    #[test]
    fn zero_distance_is_a_domain_error() {
        assert!(matches!(defocus_from_distance(&cam(), 0.0, 5e-7), Err(Error::Domain(_))));
    }

    #[test]
    fn defocus_distance_roundtrip() {
        let c = cam();
        for z in [0.7, 2.5, 5.0, 12.0] {
            let psi = defocus_from_distance(&c, z, 536.67e-9).unwrap().psi;
            let back = distance_from_defocus(&c, psi, 536.67e-9).unwrap();
            assert!((back - z).abs() < 1e-9 * z);
        }
        assert!(distance_from_defocus(&c, -40.0, 536.67e-9).is_err());
    }

    #[test]
    fn lens_phase_vertex_and_difference() {
        let c = cam();
        let (n, lambda) = (64, 536.67e-9);
        let pitch = c.aperture_diameter_m / 50.0;
        let phi = lens_phase(&c, n, pitch, lambda).unwrap();
        let max = phi.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(phi[[n / 2, n / 2]], max);
        let min = phi.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min.abs() < 1e-9 * max);
        // center vs radius r along +x
        let r = 10.0 * pitch;
        let diff = phi[[n / 2, n / 2 + 10]] - phi[[n / 2, n / 2]];
        let expect = -PI / (lambda * c.focal_length_m) * r * r;
        assert!((diff - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn lens_phase_rejects_small_grid() {
        let c = cam();
        assert!(matches!(lens_phase(&c, 16, c.aperture_diameter_m / 32.0, 5e-7), Err(Error::Config(_))));
    }

    #[test]
    fn pupil_modulus_equals_aperture() {
        let (n, pitch, r) = (32, 1.0, 10.0);
        let a = circular_aperture(n, pitch, r);
        let phase = Array2::from_shape_fn((n, n), |(i, j)| (i * j) as f64 * 0.37);
        let p = pupil_function(&a, &phase, DefocusSpec { psi: 3.3 }, r, pitch, 5e-7).unwrap();
        for (v, m) in p.data().iter().zip(a.iter()) {
            assert!((v.norm() - m).abs() < 1e-15);
        }
    }

    #[test]
    fn pupil_without_phase_is_the_aperture() {
        let (n, pitch, r) = (32, 1.0, 10.0);
        let a = circular_aperture(n, pitch, r);
        let p = pupil_function(&a, &Array2::zeros((n, n)), DefocusSpec::IN_FOCUS, r, pitch, 5e-7).unwrap();
        for (v, m) in p.data().iter().zip(a.iter()) {
            assert_eq!(v.re, *m);
            assert_eq!(v.im, 0.0);
        }
    }

    #[test]
    fn rim_carries_full_defocus() {
        let (n, pitch, r) = (32, 1.0, 10.0);
        let a = circular_aperture(n, pitch, r);
        let p = pupil_function(&a, &Array2::zeros((n, n)), DefocusSpec { psi: 5.0 }, r, pitch, 5e-7).unwrap();
        let rim = p.data()[[n / 2, n / 2 + 10]];
        let expect = Complex64::from_polar(1.0, 5.0);
        assert!((rim - expect).norm() < 1e-14);
    }

    #[test]
    fn open_aperture_psf_is_symmetric_and_unit_mass() {
        let s = PupilSampling { grid: 128, aperture_samples: 100 };
        let pitch = 1e-5;
        let a = circular_aperture(s.grid, pitch, 50.0 * pitch);
        let p = pupil_function(&a, &Array2::zeros((128, 128)), DefocusSpec::IN_FOCUS, 50.0 * pitch, pitch, 5e-7)
            .unwrap();
        let k = psf_from_pupil(&p, 23).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-9);
        let peak = k.iter().cloned().fold(0.0, f64::max);
        assert_eq!(k[[11, 11]], peak);
        for i in 0..23 {
            for j in 0..23 {
                assert!((k[[i, j]] - k[[j, i]]).abs() < 1e-12);
                assert!((k[[i, j]] - k[[22 - i, j]]).abs() < 1e-12);
                assert!((k[[i, j]] - k[[i, 22 - j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_pupil_is_degenerate() {
        let f = ComplexField::new(Array2::zeros((16, 16)), 1.0, 5e-7).unwrap();
        assert!(matches!(psf_from_pupil(&f, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn even_crop_is_rejected() {
        let f = ComplexField::new(Array2::from_elem((16, 16), Complex64::new(1.0, 0.0)), 1.0, 5e-7).unwrap();
        assert!(psf_from_pupil(&f, 4).is_err());
        assert!(psf_from_pupil(&f, 17).is_err());
    }

    #[test]
    fn field_invariants() {
        assert!(ComplexField::new(Array2::zeros((15, 16)), 1.0, 1.0).is_err());
        assert!(ComplexField::new(Array2::zeros((8, 8)), 1.0, 1.0).is_err());
        assert!(ComplexField::new(Array2::zeros((16, 16)), 0.0, 1.0).is_err());
        assert!(ComplexField::new(Array2::zeros((16, 16)), 1.0, -1.0).is_err());
    }

    #[test]
    fn undersampled_propagation_reports_inequality() {
        let f = ComplexField::new(Array2::from_elem((32, 32), Complex64::new(1.0, 0.0)), 1e-6, 5e-7).unwrap();
        match fresnel_propagate(&f, 1.0) {
            Err(Error::Sampling(msg)) => assert!(msg.contains("λz/N")),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn plane_wave_stays_plane() {
        let (n, lambda) = (32, 5e-7);
        let pitch = 1e-4;
        let f = ComplexField::new(Array2::from_elem((n, n), Complex64::new(0.7, 0.2)), pitch, lambda).unwrap();
        let z = 0.5 * max_fresnel_distance(n, pitch, lambda);
        let g = fresnel_propagate(&f, z).unwrap();
        let ratio = g.data()[[0, 0]] / f.data()[[0, 0]];
        assert!((ratio.norm() - 1.0).abs() < 1e-12);
        for (a, b) in f.data().iter().zip(g.data().iter()) {
            assert!((a * ratio - b).norm() < 1e-12);
        }
    }
}
