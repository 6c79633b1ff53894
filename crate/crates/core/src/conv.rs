//! FFT convolution with reflect or circular boundaries.
//!
//! All routines compute true convolution (kernel flipped) with the kernel
//! anchored at its center sample `(K/2, K/2)`.

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::fft::Fft2;

/// Mirror an index into `[0, n)` without repeating the edge sample
/// (`-1 -> 1`, `n -> n-2`). Parity of the index is preserved, which the
/// Bayer demosaicer relies on.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn pad_reflect(img: &Array2<f64>, pad_r: usize, pad_c: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h + 2 * pad_r, w + 2 * pad_c), |(i, j)| {
        img[[
            reflect_index(i as isize - pad_r as isize, h),
            reflect_index(j as isize - pad_c as isize, w),
        ]]
    })
}

/// Optical transfer function of `kernel` on an `rows x cols` grid: the kernel is
/// zero-padded and circularly shifted so its center sample sits at the origin.
pub fn otf(kernel: &Array2<f64>, rows: usize, cols: usize) -> Array2<Complex64> {
    let (kr, kc) = kernel.dim();
    assert!(kr <= rows && kc <= cols, "kernel larger than grid");
    let (cr, cc) = (kr / 2, kc / 2);
    let mut buf = Array2::<Complex64>::zeros((rows, cols));
    for ((i, j), &v) in kernel.indexed_iter() {
        let r = (i + rows - cr) % rows;
        let c = (j + cols - cc) % cols;
        buf[[r, c]] += Complex64::new(v, 0.0);
    }
    Fft2::new(rows, cols).forward(&mut buf);
    buf
}

/// Spectrum of a real image.
pub fn spectrum(img: &Array2<f64>, plan: &Fft2) -> Array2<Complex64> {
    let mut buf = img.mapv(|v| Complex64::new(v, 0.0));
    plan.forward(&mut buf);
    buf
}

/// Real part of the inverse transform of `spec`.
pub fn real_inverse(mut spec: Array2<Complex64>, plan: &Fft2) -> Array2<f64> {
    plan.inverse(&mut spec);
    spec.mapv(|v| v.re)
}

/// Circular (periodic) convolution.
pub fn convolve_circular(img: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let plan = Fft2::new(h, w);
    let k = otf(kernel, h, w);
    let mut spec = spectrum(img, &plan);
    spec.zip_mut_with(&k, |a, b| *a *= b);
    real_inverse(spec, &plan)
}

/// Same-size convolution with reflect padding, evaluated by FFT on the padded
/// grid. The pad equals the kernel half-width, so no circular wrap reaches the
/// cropped output.
pub fn convolve_reflect(img: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (kr, kc) = kernel.dim();
    let (pr, pc) = (kr / 2, kc / 2);
    let padded = pad_reflect(img, pr, pc);
    let full = convolve_circular(&padded, kernel);
    full.slice(s![pr..pr + h, pc..pc + w]).to_owned()
}

/// Mean over a `window x window` neighbourhood with reflect boundaries.
pub fn box_mean_reflect(img: &Array2<f64>, window: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let half = window / 2;
    let padded = pad_reflect(img, half, half);
    let (ph, pw) = padded.dim();
    // summed-area table with a zero guard row/column
    let mut sat = Array2::<f64>::zeros((ph + 1, pw + 1));
    for i in 0..ph {
        let mut row = 0.0;
        for j in 0..pw {
            row += padded[[i, j]];
            sat[[i + 1, j + 1]] = sat[[i, j + 1]] + row;
        }
    }
    let norm = 1.0 / (window * window) as f64;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (i1, j1) = (i + window, j + window);
        (sat[[i1, j1]] - sat[[i, j1]] - sat[[i1, j]] + sat[[i, j]]) * norm
    })
}
