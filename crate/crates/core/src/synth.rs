//! Seeded synthetic scenes for tests, benchmarks and the demo pipeline.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::convolve_reflect;

fn gaussian_kernel(sigma: f64) -> Array2<f64> {
    let half = (3.0 * sigma).ceil().max(1.0) as usize;
    let n = 2 * half + 1;
    let g = Array2::from_shape_fn((n, n), |(i, j)| {
        let (y, x) = (i as f64 - half as f64, j as f64 - half as f64);
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    });
    let s = g.sum();
    g / s
}

fn rescale(x: &Array2<f64>, lo: f64, hi: f64) -> Array2<f64> {
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    x.mapv(|v| lo + (hi - lo) * (v - min) / span)
}

/// Broadband random texture in `[0.05, 0.95]`, independent per channel.
/// `sigma` is the blur applied to white noise, in pixels (0 keeps it white).
pub fn textured_image(h: usize, w: usize, channels: usize, sigma: f64, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::zeros((h, w, channels));
    for c in 0..channels {
        let noise = Array2::from_shape_fn((h, w), |_| rng.gen::<f64>());
        let plane = if sigma > 0.0 { convolve_reflect(&noise, &gaussian_kernel(sigma)) } else { noise };
        out.index_axis_mut(ndarray::Axis(2), c).assign(&rescale(&plane, 0.05, 0.95));
    }
    out
}

/// Smooth color image with soft-edged shapes and mild texture, in `[0, 1]`.
pub fn natural_image(h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base: Vec<[f64; 3]> = (0..4).map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)]).collect();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..hf),
                rng.gen_range(0.0..wf),
                rng.gen_range(0.08..0.25) * hf.min(wf),
                [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
            )
        })
        .collect();
    let mut img = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
        let (u, v) = (i as f64 / hf, j as f64 / wf);
        let mut val = base[0][c] * (1.0 - u) * (1.0 - v) + base[1][c] * u * (1.0 - v) + base[2][c] * (1.0 - u) * v + base[3][c] * u * v;
        for &(ci, cj, r, amp) in &blobs {
            let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
            val += amp[c] / (1.0 + ((d - r) / 1.5).exp());
        }
        val + 0.03 * ((i as f64) * 0.21).sin() * ((j as f64) * 0.17).cos()
    });
    for mut plane in img.axis_iter_mut(ndarray::Axis(2)) {
        let smooth = convolve_reflect(&plane.to_owned(), &gaussian_kernel(0.8));
        plane.assign(&smooth);
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Four quadrants with the given plane indices (top-left, top-right,
/// bottom-left, bottom-right).
pub fn quadrant_layout(h: usize, w: usize, planes: [usize; 4]) -> Array2<usize> {
    Array2::from_shape_fn((h, w), |(i, j)| planes[2 * (i >= h / 2) as usize + (j >= w / 2) as usize])
}

/// Left half `left`, right half `right`.
pub fn step_layout(h: usize, w: usize, left: usize, right: usize) -> Array2<usize> {
    Array2::from_shape_fn((h, w), |(_, j)| if j < w / 2 { left } else { right })
}

/// Random quadrant layout with distinct planes drawn from `0..planes`.
pub fn random_quadrants(h: usize, w: usize, planes: usize, seed: u64) -> Array2<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = [0usize; 4];
    for q in 0..4 {
        pick[q] = rng.gen_range(0..planes);
    }
    quadrant_layout(h, w, pick)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_are_seeded_and_bounded() {
        let a = textured_image(16, 20, 3, 0.7, 4);
        assert_eq!(a, textured_image(16, 20, 3, 0.7, 4));
        assert_ne!(a, textured_image(16, 20, 3, 0.7, 5));
        assert!(a.iter().all(|v| (0.05 - 1e-12..=0.95 + 1e-12).contains(v)));
    }

    #[test]
    fn natural_image_in_range() {
        let a = natural_image(32, 48, 1);
        assert_eq!(a.dim(), (32, 48, 3));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn layouts() {
        let q = quadrant_layout(4, 4, [1, 2, 3, 4]);
        assert_eq!((q[[0, 0]], q[[0, 3]], q[[3, 0]], q[[3, 3]]), (1, 2, 3, 4));
        let s = step_layout(2, 6, 0, 5);
        assert_eq!(s[[1, 2]], 0);
        assert_eq!(s[[1, 3]], 5);
    }
}
