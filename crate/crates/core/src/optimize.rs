//! Projected gradient ascent on the mask parameters `(N, ε)`.
//!
//! The objective scores how distinguishable the stack's kernels are from each
//! other. Its gradient is assembled by the chain rule: the analytic phase
//! derivatives `∂Φ̃/∂N` and `∂Φ̃/∂ε` give perturbation directions on the pupil,
//! and the response of the objective along each direction is a central finite
//! difference through the PSF simulation.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_phase_grid, phase_gradients, MaskSpec, PolarGrid};
use crate::optics::{CameraConfig, PupilSampling};
use crate::rpsf::{build_stack_with, uniform_psis, Element, PsfStack};

pub const N_BOUNDS: (f64, f64) = (1.0, 4.0);
/// Lower clamp for ε; the interval is open at zero.
pub const EPS_MIN: f64 = 1e-3;
const MAX_HALVINGS: u32 = 8;
/// Shift search radius for the normalized cross-correlation.
pub const NCC_SHIFT: isize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    PairwiseDissimilarity,
    RotationSpread,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise-dissimilarity" | "pairwise" => Ok(Objective::PairwiseDissimilarity),
            "rotation-spread" | "rotation" => Ok(Objective::RotationSpread),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub lr: f64,
    pub iters: usize,
    pub psis: Vec<f64>,
    pub objective: Objective,
    /// Phase-direction step for the finite-difference Jacobian.
    pub fd_step: f64,
    pub kernel_size: usize,
    pub sampling: PupilSampling,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iters: 20,
            psis: uniform_psis(-20.0, 20.0, 10),
            objective: Objective::PairwiseDissimilarity,
            fd_step: 1e-3,
            kernel_size: 23,
            sampling: PupilSampling::scaled(128),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.psis.len() < 2 {
            return Err(Error::Config("the objective needs at least 2 defocus planes".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config(format!("fd_step must be > 0, got {}", self.fd_step)));
        }
        self.sampling.validate()
    }
}

fn zero_mean_ncc(a: &Array2<f64>, b: &Array2<f64>) -> Option<f64> {
    let (ma, mb) = (a.mean()?, b.mean()?);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    });
    (aa > 0.0 && bb > 0.0).then(|| ab / (aa * bb).sqrt())
}

/// Zero-mean normalized cross-correlation, maximized over integer shifts of
/// `b` within `±NCC_SHIFT`. Samples shifted in from outside the window are
/// zero; shifts that leave `b` flat are skipped.
pub fn ncc_max(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let a = a.to_owned();
    let (h, w) = a.dim();
    let (hi, wi) = (h as isize, w as isize);
    let mut best: Option<f64> = None;
    for dy in -NCC_SHIFT..=NCC_SHIFT {
        for dx in -NCC_SHIFT..=NCC_SHIFT {
            let shifted = Array2::from_shape_fn((h, w), |(i, j)| {
                let (si, sj) = (i as isize - dy, j as isize - dx);
                if (0..hi).contains(&si) && (0..wi).contains(&sj) {
                    b[[si as usize, sj as usize]]
                } else {
                    0.0
                }
            });
            if let Some(v) = zero_mean_ncc(&a, &shifted) {
                best = Some(best.map_or(v, |c: f64| c.max(v)));
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate("kernel without structure".into()))
}

/// Mean over ordered plane pairs `d ≠ d′` and channels of `1 − max(NCC, 0)`.
pub fn objective_pairwise(stack: &PsfStack) -> Result<f64> {
    let d = stack.depth();
    if d < 2 {
        return Err(Error::Insufficient("the objective needs at least 2 planes".into()));
    }
    let mut terms = Vec::new();
    for c in 0..stack.channels() {
        for i in 0..d {
            for j in (0..d).filter(|&j| j != i) {
                terms.push((c, i, j));
            }
        }
    }
    let vals: Vec<f64> = terms
        .par_iter()
        .map(|&(c, i, j)| Ok(1.0 - ncc_max(&stack.kernel(i, c), &stack.kernel(j, c))?.max(0.0)))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `1 − |mean_d u_d|` where `u_d` is the unit phasor of the kernel's
/// `order`-th angular moment about its center.
pub fn objective_rotation(stack: &PsfStack, order: u32) -> Result<f64> {
    if stack.depth() < 2 {
        return Err(Error::Insufficient("the objective needs at least 2 planes".into()));
    }
    let k = stack.size();
    let c0 = (k / 2) as f64;
    let mut total = 0.0;
    for c in 0..stack.channels() {
        let mut acc = Complex64::new(0.0, 0.0);
        for d in 0..stack.depth() {
            let mut m = Complex64::new(0.0, 0.0);
            for ((i, j), &v) in stack.kernel(d, c).indexed_iter() {
                let phi = (i as f64 - c0).atan2(j as f64 - c0);
                m += v * Complex64::from_polar(1.0, order as f64 * phi);
            }
            if m.norm() == 0.0 {
                return Err(Error::Degenerate("kernel has no angular structure".into()));
            }
            acc += m / m.norm();
        }
        total += 1.0 - acc.norm() / stack.depth() as f64;
    }
    Ok(total / stack.channels() as f64)
}

fn evaluate(stack: &PsfStack, objective: Objective, spec: &MaskSpec) -> Result<f64> {
    let j = match objective {
        Objective::PairwiseDissimilarity => objective_pairwise(stack)?,
        Objective::RotationSpread => objective_rotation(stack, spec.n_peaks.round().max(1.0) as u32)?,
    };
    if !j.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(j)
}

fn stack_for_phase(phase: &Array2<f64>, spec: &MaskSpec, cam: &CameraConfig, cfg: &OptimizeConfig) -> Result<PsfStack> {
    build_stack_with(Element::Phase { phase, lambda_ref: spec.lambda_ref_m }, cam, &cfg.psis, cfg.kernel_size, cfg.sampling)
}

/// Objective value of a mask.
pub fn objective(spec: &MaskSpec, cam: &CameraConfig, cfg: &OptimizeConfig) -> Result<f64> {
    spec.validate()?;
    let phase = mask_phase_grid(spec, cfg.sampling.grid, cfg.sampling.pitch(cam.aperture_diameter_m));
    evaluate(&stack_for_phase(&phase, spec, cam, cfg)?, cfg.objective, spec)
}

/// Chain-rule gradient `(∂J/∂N, ∂J/∂ε)`.
pub fn gradient(spec: &MaskSpec, cam: &CameraConfig, cfg: &OptimizeConfig) -> Result<[f64; 2]> {
    spec.validate()?;
    let n = cfg.sampling.grid;
    let pitch = cfg.sampling.pitch(cam.aperture_diameter_m);
    let grid = PolarGrid::new(n, pitch, spec.radius_m);
    let base = mask_phase_grid(spec, n, pitch);
    let (mut dn, mut de) = phase_gradients(spec, &grid.rho, &grid.phi);
    for g in [&mut dn, &mut de] {
        Zip::from(g).and(&grid.rho).for_each(|v, &r| {
            if r > 1.0 {
                *v = 0.0
            }
        });
    }
    let h = cfg.fd_step;
    let probes: Vec<(usize, f64)> = vec![(0, h), (0, -h), (1, h), (1, -h)];
    let vals: Vec<f64> = probes
        .par_iter()
        .map(|&(which, step)| {
            let dir = if which == 0 { &dn } else { &de };
            let phase = &base + &dir.mapv(|v| step * v);
            evaluate(&stack_for_phase(&phase, spec, cam, cfg)?, cfg.objective, spec)
        })
        .collect::<Result<_>>()?;
    Ok([(vals[0] - vals[1]) / (2.0 * h), (vals[2] - vals[3]) / (2.0 * h)])
}

/// Clamp into the feasible box.
pub fn project(spec: &MaskSpec) -> MaskSpec {
    MaskSpec {
        n_peaks: spec.n_peaks.clamp(N_BOUNDS.0, N_BOUNDS.1),
        epsilon: spec.epsilon.clamp(EPS_MIN, 1.0),
        ..*spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub iter: usize,
    pub n_peaks: f64,
    pub epsilon: f64,
    pub objective: f64,
}

/// Accepted iterates, starting with the projected initial mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_spec: MaskSpec,
    /// True when a step failed to improve after all halvings.
    pub stalled: bool,
}

/// Projected gradient ascent with backtracking: a step is accepted only if it
/// raises the objective; otherwise it is halved up to 8 times, after which the
/// loop stops.
pub fn optimize(spec0: &MaskSpec, cam: &CameraConfig, cfg: &OptimizeConfig) -> Result<Trajectory> {
    cfg.validate()?;
    cam.validate()?;
    let mut spec = project(spec0);
    spec.validate()?;
    let mut j = objective(&spec, cam, cfg)?;
    let mut steps = vec![Step { iter: 0, n_peaks: spec.n_peaks, epsilon: spec.epsilon, objective: j }];
    let mut stalled = false;
    for iter in 1..=cfg.iters {
        if cfg.lr == 0.0 {
            steps.push(Step { iter, n_peaks: spec.n_peaks, epsilon: spec.epsilon, objective: j });
            continue;
        }
        let g = gradient(&spec, cam, cfg)?;
        if !(g[0].is_finite() && g[1].is_finite()) {
            return Err(Error::NonFinite(format!("gradient at iteration {iter}")));
        }
        let mut t = cfg.lr;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = project(&MaskSpec { n_peaks: spec.n_peaks + t * g[0], epsilon: spec.epsilon + t * g[1], ..spec });
            if cand.n_peaks == spec.n_peaks && cand.epsilon == spec.epsilon {
                break;
            }
            let jc = objective(&cand, cam, cfg)?;
            if jc > j {
                accepted = Some((cand, jc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, jc)) => {
                log::debug!("iter {iter}: N={:.4} eps={:.4} J={jc:.6}", cand.n_peaks, cand.epsilon);
                spec = cand;
                j = jc;
                steps.push(Step { iter, n_peaks: spec.n_peaks, epsilon: spec.epsilon, objective: j });
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    Ok(Trajectory { steps, final_spec: spec, stalled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array4};

    fn blob(k: usize, ci: f64, cj: f64) -> Array2<f64> {
        let a = Array2::from_shape_fn((k, k), |(i, j)| (-((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / 2.0).exp());
        let s = a.sum();
        a / s
    }

    fn stack_of(kernels: &[Array2<f64>]) -> PsfStack {
        let k = kernels[0].nrows();
        let mut a = Array4::zeros((kernels.len(), 1, k, k));
        for (d, kern) in kernels.iter().enumerate() {
            a.slice_mut(s![d, 0, .., ..]).assign(kern);
        }
        PsfStack::new(a, (0..kernels.len()).map(|d| d as f64).collect(), vec![5e-7]).unwrap()
    }

    #[test]
    fn identical_kernels_score_zero() {
        let b = blob(11, 5.0, 5.0);
        let j = objective_pairwise(&stack_of(&[b.clone(), b.clone(), b])).unwrap();
        assert!(j.abs() < 1e-12);
    }

    #[test]
    fn disjoint_kernels_score_one() {
        let mut a = Array2::zeros((15, 15));
        a[[1, 1]] = 1.0;
        let mut b = Array2::zeros((15, 15));
        b[[13, 13]] = 1.0;
        let j = objective_pairwise(&stack_of(&[a, b])).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_copy_within_search_is_identical() {
        let a = blob(15, 7.0, 7.0);
        let b = blob(15, 8.0, 6.0);
        assert!((ncc_max(&a.view(), &b.view()).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn flat_kernel_is_degenerate() {
        let f = Array2::from_elem((5, 5), 0.04);
        assert!(ncc_max(&f.view(), &f.view()).is_err());
    }

    #[test]
    fn rotation_spread_extremes() {
        let k = 15;
        let same = vec![blob(k, 7.0, 11.0); 4];
        assert!(objective_rotation(&stack_of(&same), 1).unwrap().abs() < 1e-12);
        let opposite = vec![blob(k, 7.0, 11.0), blob(k, 7.0, 3.0)];
        assert!((objective_rotation(&stack_of(&opposite), 1).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_clamps() {
        let p = project(&MaskSpec { n_peaks: 7.0, epsilon: -1.0, ..MaskSpec::new(1.0, 5, 0.5) });
        assert_eq!(p.n_peaks, 4.0);
        assert_eq!(p.epsilon, EPS_MIN);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizeConfig::default().validate().is_ok());
        assert!(OptimizeConfig { iters: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizeConfig { psis: vec![0.0], ..Default::default() }.validate().is_err());
        assert!(OptimizeConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!("rotation-spread".parse::<Objective>().unwrap(), Objective::RotationSpread);
        assert!("bogus".parse::<Objective>().is_err());
    }
}
