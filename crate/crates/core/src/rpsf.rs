//! Depth-indexed PSF stacks and rotation analysis.

use std::collections::VecDeque;
use std::f64::consts::PI;

use ndarray::{Array2, Array4, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{mask_phase_grid, wrap_phase, MaskSpec, DEFAULT_LAMBDA_REF};
use crate::optics::{circular_aperture, crop_normalize, psf_intensity, pupil_function, CameraConfig, DefocusSpec, PupilSampling, CROP_LOSS_WARN};

/// Kernels indexed by `[plane, channel, row, col]`, each of unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    kernels: Array4<f64>,
    psis: Vec<f64>,
    wavelengths: Vec<f64>,
}

const MASS_TOL: f64 = 1e-9;

impl PsfStack {
    pub fn new(kernels: Array4<f64>, psis: Vec<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        let (d, c, k, k2) = kernels.dim();
        if k != k2 || k % 2 == 0 {
            return Err(Error::Dimension(format!("kernels must be odd and square, got {k}x{k2}")));
        }
        if d == 0 || d != psis.len() {
            return Err(Error::Dimension(format!("{d} planes but {} defocus values", psis.len())));
        }
        if c == 0 || c != wavelengths.len() {
            return Err(Error::Dimension(format!("{c} channels but {} wavelengths", wavelengths.len())));
        }
        check_monotone(&psis)?;
        for dd in 0..d {
            for cc in 0..c {
                let kv = kernels.index_axis(Axis(0), dd);
                let kv = kv.index_axis(Axis(0), cc);
                if kv.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Config(format!("kernel ({dd}, {cc}) has negative or non-finite entries")));
                }
                let sum = kv.sum();
                if (sum - 1.0).abs() > MASS_TOL {
                    return Err(Error::Config(format!("kernel ({dd}, {cc}) sums to {sum}")));
                }
            }
        }
        Ok(Self { kernels, psis, wavelengths })
    }

    /// Builds a stack from kernels that are only approximately normalized
    /// (e.g. after a round trip through `f32`), renormalizing each in `f64`.
    pub fn renormalized(mut kernels: Array4<f64>, psis: Vec<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        kernels.mapv_inplace(|v| v.max(0.0));
        for mut plane in kernels.outer_iter_mut() {
            for mut k in plane.outer_iter_mut() {
                let s = k.sum();
                if !(s > 0.0) {
                    return Err(Error::Degenerate("kernel with zero mass".into()));
                }
                k.mapv_inplace(|v| v / s);
            }
        }
        Self::new(kernels, psis, wavelengths)
    }

    pub fn depth(&self) -> usize {
        self.psis.len()
    }

    pub fn channels(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn size(&self) -> usize {
        self.kernels.dim().2
    }

    pub fn psis(&self) -> &[f64] {
        &self.psis
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn kernels(&self) -> &Array4<f64> {
        &self.kernels
    }

    pub fn kernel(&self, plane: usize, channel: usize) -> ArrayView2<'_, f64> {
        self.kernels.index_axis(Axis(0), plane).index_axis_move(Axis(0), channel)
    }

    /// Sub-stack holding a single channel.
    pub fn channel(&self, channel: usize) -> Result<Self> {
        if channel >= self.channels() {
            return Err(Error::Dimension(format!("channel {channel} of {}", self.channels())));
        }
        let k = self.kernels.select(Axis(1), &[channel]);
        Self::new(k, self.psis.clone(), vec![self.wavelengths[channel]])
    }
}

fn check_monotone(psis: &[f64]) -> Result<()> {
    if psis.iter().any(|p| !p.is_finite()) {
        return Err(Error::Config("defocus values must be finite".into()));
    }
    if psis.len() < 2 {
        return Ok(());
    }
    let asc = psis.windows(2).all(|w| w[0] < w[1]);
    let desc = psis.windows(2).all(|w| w[0] > w[1]);
    if !(asc || desc) {
        return Err(Error::Config("defocus values must be strictly monotone".into()));
    }
    Ok(())
}

/// Optical element in front of the lens.
#[derive(Debug, Clone, Copy)]
pub enum Element<'a> {
    /// Clear aperture, no mask.
    Clear,
    /// Parametric mask, relief designed at its reference wavelength.
    Mask(&'a MaskSpec),
    /// Precomputed smooth (unwrapped) mask phase at `lambda_ref`, sampled on the pupil grid.
    Phase { phase: &'a Array2<f64>, lambda_ref: f64 },
}

/// Builds the stack for `spec` with the default pupil sampling.
pub fn build_stack(spec: &MaskSpec, cam: &CameraConfig, psis: &[f64], k: usize) -> Result<PsfStack> {
    build_stack_with(Element::Mask(spec), cam, psis, k, PupilSampling::default())
}

/// Builds the stack for any element.
///
/// Defocus values are given at the element's reference wavelength; channel
/// `c` sees `Ψ·λ_ref/λ_c`. The mask relief is the wrapped smooth phase, so
/// channel `c` receives `(λ_ref/λ_c)·(Φ̃ mod 2π)`.
pub fn build_stack_with(
    element: Element<'_>,
    cam: &CameraConfig,
    psis: &[f64],
    k: usize,
    sampling: PupilSampling,
) -> Result<PsfStack> {
    if psis.is_empty() {
        return Err(Error::Config("at least one defocus plane is required".into()));
    }
    check_monotone(psis)?;
    cam.validate()?;
    sampling.validate()?;
    if k % 2 == 0 || k > sampling.grid {
        return Err(Error::Config(format!("kernel size {k} must be odd and at most {}", sampling.grid)));
    }
    let n = sampling.grid;
    let pitch = sampling.pitch(cam.aperture_diameter_m);
    let radius = cam.pupil_radius();
    let aperture = circular_aperture(n, pitch, radius);

    let (reference, lambda_ref) = match element {
        Element::Clear => (None, DEFAULT_LAMBDA_REF),
        Element::Mask(spec) => {
            spec.validate()?;
            (Some(mask_phase_grid(spec, n, pitch)), spec.lambda_ref_m)
        }
        Element::Phase { phase, lambda_ref } => {
            if phase.dim() != (n, n) {
                return Err(Error::Dimension(format!("mask phase {:?} on a {n}x{n} pupil", phase.dim())));
            }
            (Some(phase.clone()), lambda_ref)
        }
    };
    let channel_phase: Vec<Array2<f64>> = cam
        .wavelengths_m
        .iter()
        .map(|&wl| match &reference {
            None => Array2::zeros((n, n)),
            Some(p) => p.mapv(|v| lambda_ref / wl * wrap_phase(v)),
        })
        .collect();

    let c = cam.wavelengths_m.len();
    let jobs: Vec<(usize, usize)> = (0..psis.len()).flat_map(|d| (0..c).map(move |ch| (d, ch))).collect();
    let kernels: Vec<(Array2<f64>, f64)> = jobs
        .par_iter()
        .map(|&(d, ch)| {
            let wl = cam.wavelengths_m[ch];
            let defocus = DefocusSpec { psi: psis[d] * lambda_ref / wl };
            let pupil = pupil_function(&aperture, &channel_phase[ch], defocus, radius, pitch, wl)?;
            crop_normalize(&psf_intensity(&pupil)?, k)
        })
        .collect::<Result<_>>()?;

    let worst = kernels.iter().map(|(_, r)| *r).fold(1.0, f64::min);
    if 1.0 - worst > CROP_LOSS_WARN {
        log::warn!("{k}x{k} crop keeps as little as {:.2}% of a kernel's energy", 100.0 * worst);
    }
    let mut out = Array4::zeros((psis.len(), c, k, k));
    for ((d, ch), (kern, _)) in jobs.into_iter().zip(kernels) {
        out.index_axis_mut(Axis(0), d).index_axis_mut(Axis(0), ch).assign(&kern);
    }
    PsfStack::new(out, psis.to_vec(), cam.wavelengths_m.clone())
}

/// `count` values uniformly spaced over `[lo, hi]`, inclusive.
pub fn uniform_psis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// A connected bright lobe of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    /// Centroid angle about the kernel center, `atan2(row, col)` in `(-π, π]`.
    pub angle: f64,
    /// Centroid distance from the kernel center, in pixels.
    pub radius: f64,
    pub mass: f64,
}

/// Lobes below this centroid offset (pixels) have no defined angle.
const MIN_LOBE_RADIUS: f64 = 0.25;

/// Extracts the `count` brightest lobes. Each lobe is the 4-connected
/// component, thresholded at half of its own peak, that contains the current
/// maximum; it is masked out before the next lobe is searched.
pub fn dominant_lobes(kernel: &ArrayView2<f64>, count: usize) -> Result<Vec<Lobe>> {
    let (h, w) = kernel.dim();
    let max = kernel.iter().cloned().fold(f64::MIN, f64::max);
    let min = kernel.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > min) {
        return Err(Error::Degenerate("kernel is flat, no dominant lobe".into()));
    }
    let (ci, cj) = ((h / 2) as f64, (w / 2) as f64);
    let mut taken = Array2::from_elem((h, w), false);
    let mut lobes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<((usize, usize), f64)> = None;
        for ((i, j), &v) in kernel.indexed_iter() {
            if !taken[[i, j]] && best.map_or(true, |(_, b)| v > b) {
                best = Some(((i, j), v));
            }
        }
        let Some((seed, peak)) = best else {
            return Err(Error::Degenerate("no pixels left for another lobe".into()));
        };
        if !(peak > 0.0) {
            return Err(Error::Degenerate("no remaining energy for another lobe".into()));
        }
        let thr = 0.5 * peak;
        let (mut m, mut mi, mut mj) = (0.0, 0.0, 0.0);
        let mut queue = VecDeque::from([seed]);
        taken[seed] = true;
        while let Some((i, j)) = queue.pop_front() {
            let v = kernel[[i, j]];
            m += v;
            mi += v * i as f64;
            mj += v * j as f64;
            let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
            for (a, b) in nbrs {
                if a < h && b < w && !taken[[a, b]] && kernel[[a, b]] >= thr {
                    taken[[a, b]] = true;
                    queue.push_back((a, b));
                }
            }
        }
        let (dy, dx) = (mi / m - ci, mj / m - cj);
        let radius = dy.hypot(dx);
        if radius < MIN_LOBE_RADIUS {
            return Err(Error::Degenerate(format!(
                "lobe centroid {radius:.3} px from the center, no defined angle"
            )));
        }
        lobes.push(Lobe { angle: dy.atan2(dx), radius, mass: m });
    }
    Ok(lobes)
}

/// Dominant-lobe angle per plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationTrace {
    pub psis: Vec<f64>,
    /// Wrapped angles in `(-π, π]`.
    pub angles: Vec<f64>,
    /// Normalized peak distance (centroid radius / kernel half-width).
    pub radii: Vec<f64>,
    /// Angular period used for unwrapping (`2π/N` for an `N`-lobe kernel).
    pub period: f64,
}

impl RotationTrace {
    /// Continues each angle onto the branch nearest to its predecessor.
    pub fn unwrapped(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.angles.len());
        for &a in &self.angles {
            match out.last() {
                None => out.push(a),
                Some(&prev) => {
                    let k = ((prev - a) / self.period).round();
                    out.push(a + k * self.period);
                }
            }
        }
        out
    }
}

/// Dominant-lobe rotation trace of one channel.
pub fn peak_angles(stack: &PsfStack, channel: usize) -> Result<RotationTrace> {
    peak_angles_folded(stack, channel, 1)
}

/// As [`peak_angles`], unwrapping modulo `2π/lobes` for kernels with
/// `lobes`-fold symmetric peaks.
pub fn peak_angles_folded(stack: &PsfStack, channel: usize, lobes: usize) -> Result<RotationTrace> {
    if channel >= stack.channels() {
        return Err(Error::Dimension(format!("channel {channel} of {}", stack.channels())));
    }
    let half = (stack.size() / 2) as f64;
    let mut angles = Vec::with_capacity(stack.depth());
    let mut radii = Vec::with_capacity(stack.depth());
    for d in 0..stack.depth() {
        let lobe = dominant_lobes(&stack.kernel(d, channel), 1)?[0];
        angles.push(lobe.angle);
        radii.push(lobe.radius / half);
    }
    Ok(RotationTrace { psis: stack.psis().to_vec(), angles, radii, period: 2.0 * PI / lobes.max(1) as f64 })
}

/// Least-squares slope of the unwrapped angle against `Ψ`, radians per unit defocus.
pub fn rotation_rate(trace: &RotationTrace) -> Result<f64> {
    let n = trace.angles.len();
    if n < 3 || trace.psis.len() != n {
        return Err(Error::Insufficient(format!("rotation rate needs at least 3 planes, got {n}")));
    }
    let y = trace.unwrapped();
    let mx = trace.psis.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in trace.psis.iter().zip(&y) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::Insufficient("defocus values are all equal".into()));
    }
    Ok(sxy / sxx)
}

/// Flags planes whose rotation, measured from the plane nearest focus, leaves
/// `(-π/N, π/N)`; beyond that the `N` lobes alias onto each other.
pub fn ambiguity_flags(trace: &RotationTrace, n_peaks: f64) -> Vec<bool> {
    let y = trace.unwrapped();
    let Some(origin) = trace
        .psis
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| y[i])
    else {
        return vec![];
    };
    let limit = PI / n_peaks;
    y.iter().map(|a| (a - origin).abs() >= limit).collect()
}

/// Peak value of every kernel, `[plane][channel]`.
pub fn peak_values(stack: &PsfStack) -> Vec<Vec<f64>> {
    (0..stack.depth())
        .map(|d| {
            (0..stack.channels()).map(|c| stack.kernel(d, c).iter().cloned().fold(0.0, f64::max)).collect()
        })
        .collect()
}

/// Unit-mass check used by tests and loaders.
pub fn is_unit_mass(k: &ArrayView2<f64>) -> bool {
    let mut ok = true;
    Zip::from(k).for_each(|v| ok &= *v >= 0.0);
    ok && (k.sum() - 1.0).abs() <= MASS_TOL
}
