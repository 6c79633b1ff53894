//! Two-dimensional FFT helpers on `ndarray` grids.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

/// A planned 2-D transform for a fixed grid shape.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft(cols, FftDirection::Forward),
            row_inv: planner.plan_fft(cols, FftDirection::Inverse),
            col_fwd: planner.plan_fft(rows, FftDirection::Forward),
            col_inv: planner.plan_fft(rows, FftDirection::Inverse),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.process(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform scaled by `1/(rows*cols)`, in place.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.process(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    fn process(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft grid shape mismatch");
        let mut scratch = vec![Complex64::default(); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        for mut r in data.axis_iter_mut(Axis(0)) {
            match r.as_slice_mut() {
                Some(s) => row.process_with_scratch(s, &mut scratch),
                None => {
                    let mut buf = r.to_vec();
                    row.process_with_scratch(&mut buf, &mut scratch);
                    r.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
                }
            }
        }
        let mut buf = vec![Complex64::default(); self.rows];
        for mut c in data.axis_iter_mut(Axis(1)) {
            buf.iter_mut().zip(c.iter()).for_each(|(b, v)| *b = *v);
            col.process_with_scratch(&mut buf, &mut scratch);
            c.iter_mut().zip(buf.iter()).for_each(|(d, v)| *d = *v);
        }
    }
}

pub fn fft2(data: &mut Array2<Complex64>) {
    let (r, c) = data.dim();
    Fft2::new(r, c).forward(data);
}

pub fn ifft2(data: &mut Array2<Complex64>) {
    let (r, c) = data.dim();
    Fft2::new(r, c).inverse(data);
}

pub fn to_complex(a: &Array2<f64>) -> Array2<Complex64> {
    a.mapv(|v| Complex64::new(v, 0.0))
}

/// Moves the zero-frequency sample from index 0 to index `n/2` on both axes.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (r, c) = a.dim();
    roll(a, r / 2, c / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (r, c) = a.dim();
    roll(a, r - r / 2, c - c / 2)
}

/// Circular shift: output[(i + dr) % r, (j + dc) % c] = input[i, j].
pub fn roll<T: Clone>(a: &Array2<T>, dr: usize, dc: usize) -> Array2<T> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((r, c), |(i, j)| a[[(i + r - dr % r) % r, (j + c - dc % c) % c]].clone())
}

/// Sample frequencies in cycles per unit length, FFT order (`numpy.fft.fftfreq`).
pub fn fftfreq(n: usize, spacing: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let m = if k < n.div_ceil(2) { k as isize } else { k as isize - n as isize };
            m as f64 / (n as f64 * spacing)
        })
        .collect()
}
