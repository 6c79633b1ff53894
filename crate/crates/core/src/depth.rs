//! Per-pixel depth-plane classification by deconvolve–reblur consistency.
//!
//! For every candidate plane the coded image is Wiener-deconvolved with that
//! plane's kernel and blurred again. Two scores are available:
//!
//! * [`Scoring::Residual`]: squared reconstruction error, box filtered and
//!   summed over channels.
//! * [`Scoring::Likelihood`]: negative Gaussian log-likelihood of the
//!   observation under the plane's blur, with a flat signal spectrum. The data
//!   term is the observation times its reblur residual; the per-plane
//!   log-determinant `noise_var · mean_f ln(|H_d|² + nsr)` stops blurrier
//!   planes from losing by default.

use ndarray::{s, Array2, Array3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{otf, pad_reflect, real_inverse, spectrum, box_mean_reflect};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::rpsf::PsfStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    Residual,
    #[default]
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthConfig {
    pub nsr: f64,
    /// Odd box-filter size for the residual.
    pub window: usize,
    /// Parabolic refinement over neighbouring planes.
    pub subplane: bool,
    pub scoring: Scoring,
    /// Per-pixel noise variance assumed by [`Scoring::Likelihood`].
    pub noise_var: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self { nsr: 1.5e-2, window: 15, subplane: false, scoring: Scoring::Likelihood, noise_var: 1e-3 }
    }
}

/// Variance the matched configuration adds on top of the sensor noise, for
/// demosaicing error and kernel crop mismatch.
pub const MODEL_ERROR_VAR: f64 = 1e-4;
/// Flat-spectrum signal variance assumed by the matched configuration.
pub const SIGNAL_VAR: f64 = 0.05;

impl DepthConfig {
    /// Likelihood scoring matched to a known per-pixel noise variance:
    /// `noise_var` absorbs the model error and `nsr` is its ratio to [`SIGNAL_VAR`].
    pub fn matched(noise_var: f64) -> Self {
        let v = noise_var + MODEL_ERROR_VAR;
        Self { nsr: v / SIGNAL_VAR, noise_var: v, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nsr > 0.0 && self.nsr.is_finite()) {
            return Err(Error::Config(format!("nsr must be finite and > 0, got {}", self.nsr)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("window must be odd, got {}", self.window)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!("noise_var must be finite and >= 0, got {}", self.noise_var)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub plane_index: Array2<usize>,
    /// `D x H x W` smoothed scores, lower is better.
    pub residuals: Array3<f64>,
    /// Second-best minus best residual.
    pub confidence: Array2<f64>,
    /// Fractional plane index, when sub-plane refinement is on.
    pub continuous: Option<Array2<f64>>,
}

/// Per-pixel score of one channel against one kernel. The image is
/// reflect-padded by the kernel size so the circular filters do not wrap
/// across the frame.
fn plane_score(img: &Array2<f64>, psf: &Array2<f64>, cfg: &DepthConfig) -> Array2<f64> {
    let (h, w) = img.dim();
    let pad = psf.nrows().max(psf.ncols());
    let padded = pad_reflect(img, pad, pad);
    let (ph, pw) = padded.dim();
    let plan = Fft2::new(ph, pw);
    let hk = otf(psf, ph, pw);
    let mut spec = spectrum(&padded, &plan);
    let mut logdet = 0.0;
    // y - reblur = F⁻¹[nsr/(|H|² + nsr) · Y]
    Zip::from(&mut spec).and(&hk).for_each(|y, &k| {
        let g = k.norm_sqr();
        logdet += (g + cfg.nsr).ln();
        *y *= cfg.nsr / (g + cfg.nsr);
    });
    logdet /= (ph * pw) as f64;
    let resid = real_inverse(spec, &plan);
    let core = resid.slice(s![pad..pad + h, pad..pad + w]);
    match cfg.scoring {
        Scoring::Residual => core.mapv(|r| r * r),
        Scoring::Likelihood => {
            let mean = img.mean().unwrap_or(0.0);
            Zip::from(&core).and(img).map_collect(|&r, &y| r * (y - mean) + cfg.noise_var * logdet)
        }
    }
}

/// Scores every plane of `stack` against `img` and picks the best per pixel.
pub fn estimate(img: &Array3<f64>, stack: &PsfStack, cfg: &DepthConfig) -> Result<DepthEstimate> {
    cfg.validate()?;
    let (h, w, c) = img.dim();
    let d = stack.depth();
    if d < 2 {
        return Err(Error::Insufficient(format!("depth estimation needs at least 2 planes, got {d}")));
    }
    if stack.channels() != c {
        return Err(Error::Dimension(format!("stack has {} channels, image {c}", stack.channels())));
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input image".into()));
    }
    let chans: Vec<Array2<f64>> = img.axis_iter(Axis(2)).map(|v| v.to_owned()).collect();
    let per_plane: Vec<Array2<f64>> = (0..d)
        .into_par_iter()
        .map(|p| {
            let mut acc = Array2::<f64>::zeros((h, w));
            for (ch, x) in chans.iter().enumerate() {
                acc += &plane_score(x, &stack.kernel(p, ch).to_owned(), cfg);
            }
            box_mean_reflect(&acc, cfg.window)
        })
        .collect();
    let mut residuals = Array3::zeros((d, h, w));
    for (p, r) in per_plane.into_iter().enumerate() {
        residuals.index_axis_mut(Axis(0), p).assign(&r);
    }
    let (plane_index, confidence) = argmin_planes(&residuals);
    let continuous = cfg.subplane.then(|| parabolic_refine(&residuals, &plane_index));
    Ok(DepthEstimate { plane_index, residuals, confidence, continuous })
}

/// Scores closer than this relative margin (or the absolute floor) count as
/// ties, so rounding noise in the FFTs cannot break them.
const TIE_TOLERANCE: f64 = 1e-9;
const TIE_FLOOR: f64 = 1e-15;

fn tie_band(v: f64) -> f64 {
    (TIE_TOLERANCE * v.abs()).max(TIE_FLOOR)
}

/// Per-pixel argmin over the leading axis (ties to the smaller index) and the
/// margin to the runner-up.
pub fn argmin_planes(residuals: &Array3<f64>) -> (Array2<usize>, Array2<f64>) {
    let (d, h, w) = residuals.dim();
    let mut index = Array2::zeros((h, w));
    let mut conf = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut best = 0;
            let mut b = residuals[[0, i, j]];
            let mut second = f64::INFINITY;
            for p in 1..d {
                let v = residuals[[p, i, j]];
                if v < b - tie_band(b) {
                    second = b;
                    b = v;
                    best = p;
                } else if v < second {
                    second = v;
                }
            }
            index[[i, j]] = best;
            conf[[i, j]] = if second - b <= tie_band(b) { 0.0 } else { second - b };
        }
    }
    (index, conf)
}

/// Vertex of the parabola through the best plane and its neighbours.
fn parabolic_refine(residuals: &Array3<f64>, index: &Array2<usize>) -> Array2<f64> {
    let d = residuals.dim().0;
    Array2::from_shape_fn(index.dim(), |(i, j)| {
        let p = index[[i, j]];
        if p == 0 || p + 1 >= d {
            return p as f64;
        }
        let (a, b, c) = (residuals[[p - 1, i, j]], residuals[[p, i, j]], residuals[[p + 1, i, j]]);
        let den = a - 2.0 * b + c;
        if den <= 0.0 {
            return p as f64;
        }
        p as f64 + (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    })
}

/// RMSE between the depth values the two plane maps stand for.
pub fn depth_rmse(pred: &Array2<usize>, truth: &Array2<usize>, plane_values: &[f64]) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", pred.dim(), truth.dim())));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("empty plane map".into()));
    }
    let mut sse = 0.0;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let (Some(a), Some(b)) = (plane_values.get(p), plane_values.get(t)) else {
            return Err(Error::Config(format!("plane index {} out of range", p.max(t))));
        };
        sse += (a - b) * (a - b);
    }
    Ok((sse / pred.len() as f64).sqrt())
}

/// Fraction of pixels selected by `valid` where `pred == truth`.
pub fn accuracy(pred: &Array2<usize>, truth: &Array2<usize>, valid: &Array2<bool>) -> Result<f64> {
    if pred.dim() != truth.dim() || pred.dim() != valid.dim() {
        return Err(Error::Dimension("plane maps and validity mask differ in shape".into()));
    }
    let mut n = 0usize;
    let mut hit = 0usize;
    Zip::from(pred).and(truth).and(valid).for_each(|p, t, &v| {
        if v {
            n += 1;
            hit += (p == t) as usize;
        }
    });
    if n == 0 {
        return Err(Error::Insufficient("no valid pixels".into()));
    }
    Ok(hit as f64 / n as f64)
}

/// Pixels at least `band` away (Chebyshev distance) from the frame border and
/// from any change of plane index.
pub fn interior_mask(plane_index: &Array2<usize>, band: usize) -> Array2<bool> {
    let (h, w) = plane_index.dim();
    let mut edge = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            let v = plane_index[[i, j]];
            if (i + 1 < h && plane_index[[i + 1, j]] != v) || (j + 1 < w && plane_index[[i, j + 1]] != v) {
                edge[[i, j]] = true;
                if i + 1 < h {
                    edge[[i + 1, j]] = true;
                }
                if j + 1 < w {
                    edge[[i, j + 1]] = true;
                }
            }
        }
    }
    let edges: Vec<(usize, usize)> = edge.indexed_iter().filter(|(_, &e)| e).map(|(ij, _)| ij).collect();
    Array2::from_shape_fn((h, w), |(i, j)| {
        if i < band || j < band || i + band >= h || j + band >= w {
            return false;
        }
        !edges.iter().any(|&(a, b)| a.abs_diff(i) < band && b.abs_diff(j) < band)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn two_plane_stack() -> PsfStack {
        let mut k = Array4::zeros((2, 1, 3, 3));
        k[[0, 0, 1, 1]] = 1.0;
        k.slice_mut(s![1, 0, .., ..]).fill(1.0 / 9.0);
        PsfStack::new(k, vec![0.0, 1.0], vec![5e-7]).unwrap()
    }

    #[test]
    fn constant_image_has_no_cue() {
        let img = Array3::from_elem((20, 20, 1), 0.4);
        for scoring in [Scoring::Residual, Scoring::Likelihood] {
            let cfg = DepthConfig { window: 3, scoring, noise_var: 0.0, ..Default::default() };
            let e = estimate(&img, &two_plane_stack(), &cfg).unwrap();
            assert!(e.plane_index.iter().all(|&p| p == 0));
            assert!(e.confidence.iter().all(|&c| c < 1e-15));
        }
    }

    #[test]
    fn flat_input_prefers_the_blurrier_plane_under_noise() {
        let img = Array3::from_elem((20, 20, 1), 0.4);
        let e = estimate(&img, &two_plane_stack(), &DepthConfig { window: 3, ..Default::default() }).unwrap();
        assert!(e.plane_index.iter().all(|&p| p == 1));
    }

    #[test]
    fn single_plane_is_rejected() {
        let mut k = Array4::zeros((1, 1, 1, 1));
        k[[0, 0, 0, 0]] = 1.0;
        let s = PsfStack::new(k, vec![0.0], vec![5e-7]).unwrap();
        assert!(matches!(estimate(&Array3::zeros((8, 8, 1)), &s, &DepthConfig::default()), Err(Error::Insufficient(_))));
    }

    #[test]
    fn argmin_ties_and_margin() {
        let mut r = Array3::zeros((3, 1, 2));
        r[[0, 0, 0]] = 2.0;
        r[[1, 0, 0]] = 1.0;
        r[[2, 0, 0]] = 1.0;
        r[[0, 0, 1]] = 0.5;
        r[[1, 0, 1]] = 3.0;
        r[[2, 0, 1]] = 1.0;
        let (idx, conf) = argmin_planes(&r);
        assert_eq!(idx[[0, 0]], 1);
        assert_eq!(conf[[0, 0]], 0.0);
        assert_eq!(idx[[0, 1]], 0);
        assert_eq!(conf[[0, 1]], 0.5);
    }

    #[test]
    fn rmse_closed_forms() {
        let truth = Array2::from_elem((4, 5), 0usize);
        assert_eq!(depth_rmse(&truth, &truth, &[0.0, 1.0]).unwrap(), 0.0);
        let shifted = Array2::from_elem((4, 5), 1usize);
        assert!((depth_rmse(&shifted, &truth, &[2.0, 2.5]).unwrap() - 0.5).abs() < 1e-15);
        let mut mixed = truth.clone();
        for j in 0..5 {
            mixed[[0, j]] = 1;
        }
        assert!((depth_rmse(&mixed, &truth, &[0.0, 1.0]).unwrap() - 0.25f64.sqrt()).abs() < 1e-15);
        assert!(depth_rmse(&truth, &Array2::zeros((4, 4)), &[0.0]).is_err());
    }

    #[test]
    fn interior_excludes_edges_and_border() {
        let idx = Array2::from_shape_fn((20, 20), |(_, j)| (j >= 10) as usize);
        let m = interior_mask(&idx, 3);
        assert!(!m[[10, 9]] && !m[[10, 10]] && !m[[10, 7]]);
        assert!(m[[10, 6]] && m[[10, 13]]);
        assert!(!m[[2, 5]] && !m[[17, 5]]);
    }

    #[test]
    fn parabola_vertex() {
        let mut r = Array3::zeros((3, 1, 1));
        r[[0, 0, 0]] = 1.0;
        r[[1, 0, 0]] = 0.0;
        r[[2, 0, 0]] = 3.0;
        let (idx, _) = argmin_planes(&r);
        let v = parabolic_refine(&r, &idx)[[0, 0]];
        assert!((v - (1.0 - 0.25)).abs() < 1e-12);
    }
}
