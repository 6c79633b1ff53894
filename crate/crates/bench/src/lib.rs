//! Shared fixtures for the benchmarks.

use ndarray::{Array2, Array3};
use rpsf_core::rpsf::{build_stack, uniform_psis};
use rpsf_core::synth::{random_quadrants, textured_image};
use rpsf_core::{CameraConfig, MaskSpec, PsfStack};

/// Double-helix stack over ten planes, K = 23, at the default pupil sampling.
pub fn reference_stack() -> PsfStack {
    build_stack(&MaskSpec::new(2.0, 5, 0.9), &CameraConfig::nyuv2(), &uniform_psis(-20.0, 20.0, 10), 23)
        .expect("default configuration is valid")
}

/// Textured RGB scene with four random planes.
pub fn scene(size: usize, planes: usize, seed: u64) -> (Array3<f64>, Array2<usize>) {
    (textured_image(size, size, 3, 0.0, seed), random_quadrants(size, size, planes, seed))
}
