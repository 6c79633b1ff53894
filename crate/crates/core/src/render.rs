//! Layered depth-dependent image formation.
//!
//! A depth map is quantized into `D` planes with binary masks `M_d` forming a
//! partition of unity. The coded image is
//! `I_sim = Σ_d (I_aif ∗ RPSF_d) ⊙ M_d`, convolved per channel with reflect
//! padding. No matting is applied at layer boundaries.

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;

use crate::conv::{otf, pad_reflect, real_inverse, spectrum};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::rpsf::PsfStack;

/// All-in-focus image with a per-pixel plane assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredScene {
    aif: Array3<f64>,
    plane_index: Array2<usize>,
    planes: usize,
}

impl LayeredScene {
    /// `aif` is `H x W x C` with values in `[0, 1]`; `plane_index` entries must
    /// be below `planes`.
    pub fn new(aif: Array3<f64>, plane_index: Array2<usize>, planes: usize) -> Result<Self> {
        let (h, w, c) = aif.dim();
        if plane_index.dim() != (h, w) {
            return Err(Error::Dimension(format!("image {h}x{w} vs plane map {:?}", plane_index.dim())));
        }
        if c == 0 || planes == 0 {
            return Err(Error::Dimension("scene needs at least one channel and one plane".into()));
        }
        if let Some(&bad) = plane_index.iter().find(|&&p| p >= planes) {
            return Err(Error::Config(format!("plane index {bad} out of range for {planes} planes")));
        }
        if aif.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("all-in-focus values must lie in [0, 1]".into()));
        }
        Ok(Self { aif, plane_index, planes })
    }

    pub fn aif(&self) -> &Array3<f64> {
        &self.aif
    }

    pub fn plane_index(&self) -> &Array2<usize> {
        &self.plane_index
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.aif.dim()
    }

    /// Binary mask `M_d`.
    pub fn mask(&self, d: usize) -> Array2<f64> {
        plane_mask(&self.plane_index, d)
    }

    pub fn masks(&self) -> Vec<Array2<f64>> {
        (0..self.planes).map(|d| self.mask(d)).collect()
    }
}

pub fn plane_mask(plane_index: &Array2<usize>, d: usize) -> Array2<f64> {
    plane_index.mapv(|p| if p == d { 1.0 } else { 0.0 })
}

/// Assigns each pixel to the nearest representative depth. Ties go to the
/// nearer (smaller-depth) plane. `planes` must be strictly ascending.
pub fn quantize_depth(depth: &Array2<f64>, planes: &[f64]) -> Result<(Array2<usize>, Vec<Array2<f64>>)> {
    if planes.is_empty() {
        return Err(Error::Config("planes list is empty".into()));
    }
    if !planes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("planes must be strictly ascending".into()));
    }
    if depth.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("depth map contains NaN".into()));
    }
    let index = depth.mapv(|z| {
        let mut best = 0;
        let mut dist = (z - planes[0]).abs();
        for (k, p) in planes.iter().enumerate().skip(1) {
            let dk = (z - p).abs();
            if dk < dist {
                best = k;
                dist = dk;
            }
        }
        best
    });
    let masks = (0..planes.len()).map(|d| plane_mask(&index, d)).collect();
    Ok((index, masks))
}

/// Renders the coded image of `scene` through `stack`.
pub fn render(scene: &LayeredScene, stack: &PsfStack) -> Result<Array3<f64>> {
    let (h, w, c) = scene.dim();
    if stack.depth() != scene.planes() {
        return Err(Error::Dimension(format!("stack has {} planes, scene {}", stack.depth(), scene.planes())));
    }
    if stack.channels() != c {
        return Err(Error::Dimension(format!("stack has {} channels, image {c}", stack.channels())));
    }
    let k = stack.size();
    let pad = k / 2;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let masks = scene.masks();
    let used: Vec<usize> = (0..scene.planes()).filter(|&d| masks[d].iter().any(|&m| m != 0.0)).collect();

    let channels: Vec<Array2<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let plan = Fft2::new(ph, pw);
            let img = scene.aif().index_axis(Axis(2), ch).to_owned();
            let spec = spectrum(&pad_reflect(&img, pad, pad), &plan);
            let mut acc = Array2::<f64>::zeros((h, w));
            for &d in &used {
                let kernel = stack.kernel(d, ch).to_owned();
                let mut prod = otf(&kernel, ph, pw);
                prod.zip_mut_with(&spec, |a, b| *a *= b);
                let blurred = real_inverse(prod, &plan);
                let crop = blurred.slice(s![pad..pad + h, pad..pad + w]);
                acc.zip_mut_with(&(&crop * &masks[d]), |a, b| *a += b);
            }
            acc.mapv_inplace(|v| v.max(0.0));
            acc
        })
        .collect();
    stack_channels(&channels)
}

/// Interleaves 2-D planes into an `H x W x C` image.
pub fn stack_channels(channels: &[Array2<f64>]) -> Result<Array3<f64>> {
    let Some(first) = channels.first() else {
        return Err(Error::Dimension("no channels".into()));
    };
    let (h, w) = first.dim();
    let mut out = Array3::zeros((h, w, channels.len()));
    for (c, plane) in channels.iter().enumerate() {
        if plane.dim() != (h, w) {
            return Err(Error::Dimension("channel shapes differ".into()));
        }
        out.index_axis_mut(Axis(2), c).assign(plane);
    }
    Ok(out)
}
