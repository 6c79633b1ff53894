use std::f64::consts::PI;

use rpsf_core::optics::{CameraConfig, PupilSampling};
use rpsf_core::rpsf::{
    ambiguity_flags, build_stack, build_stack_with, dominant_lobes, is_unit_mass, peak_angles, peak_angles_folded,
    peak_values, rotation_rate, uniform_psis, Element,
};
use rpsf_core::MaskSpec;

/// Finer focal sampling for lobe tracking: the aperture spans 200 of 512
/// samples and the kernel is widened to cover the same physical window.
const ANALYSIS: PupilSampling = PupilSampling { grid: 512, aperture_samples: 200 };
const ANALYSIS_K: usize = 47;

#[test]
fn full_sized_stack_is_valid() {
    let cam = CameraConfig::nyuv2();
    let stack = build_stack(&MaskSpec::new(2.0, 5, 0.9), &cam, &uniform_psis(-20.0, 20.0, 10), 23).unwrap();
    assert_eq!(stack.kernels().dim(), (10, 3, 23, 23));
    for d in 0..10 {
        for c in 0..3 {
            assert!(is_unit_mass(&stack.kernel(d, c)));
        }
    }
    let again = build_stack(&MaskSpec::new(2.0, 5, 0.9), &cam, &uniform_psis(-20.0, 20.0, 10), 23).unwrap();
    assert_eq!(stack, again);
}

#[test]
fn masks_blur_in_focus_and_clear_aperture_does_not() {
    let cam = CameraConfig::nyuv2();
    let clear = build_stack_with(Element::Clear, &cam, &[0.0], 23, PupilSampling::default()).unwrap();
    let clear_peak = peak_values(&clear)[0][1];
    for spec in [MaskSpec::new(1.0, 5, 0.9), MaskSpec::new(2.0, 5, 0.9), MaskSpec::new(1.0, 5, 0.5), MaskSpec::new(3.0, 7, 0.7)] {
        let peak = peak_values(&build_stack(&spec, &cam, &[0.0], 23).unwrap())[0][1];
        assert!(peak < 0.9 && peak < clear_peak, "{spec:?}: {peak} vs clear {clear_peak}");
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn channels_rotate_differently_out_of_focus() {
    let cam = CameraConfig::nyuv2();
    let stack = build_stack_with(Element::Mask(&MaskSpec::new(1.0, 5, 0.9)), &cam, &[-15.0, 10.0, 15.0], ANALYSIS_K, ANALYSIS).unwrap();
    let traces: Vec<_> = (0..3).map(|c| peak_angles(&stack, c).unwrap()).collect();
    for d in 0..3 {
        let widest = (0..3)
            .flat_map(|a| (0..3).map(move |b| (a, b)))
            .map(|(a, b)| angle_gap(traces[a].angles[d], traces[b].angles[d]))
            .fold(0.0, f64::max);
        assert!(widest.to_degrees() > 0.5, "plane {d}: {widest}");
    }
}

#[test]
fn single_helix_rotates_monotonically_near_focus() {
    let cam = CameraConfig::nyuv2();
    let psis = uniform_psis(-8.0, 8.0, 9);
    let stack = build_stack_with(Element::Mask(&MaskSpec::new(1.0, 5, 0.9)), &cam, &psis, ANALYSIS_K, ANALYSIS).unwrap();
    let y = peak_angles(&stack, 1).unwrap().unwrapped();
    let up = y.windows(2).all(|w| w[1] > w[0]);
    let down = y.windows(2).all(|w| w[1] < w[0]);
    assert!(up || down, "{y:?}");
}

#[test]
fn more_lobes_rotate_slower() {
    let cam = CameraConfig::nyuv2();
    let psis = uniform_psis(-6.0, 6.0, 7);
    let one = build_stack_with(Element::Mask(&MaskSpec::new(1.0, 5, 0.9)), &cam, &psis, ANALYSIS_K, ANALYSIS).unwrap();
    let two = build_stack_with(Element::Mask(&MaskSpec::new(2.0, 5, 0.9)), &cam, &psis, ANALYSIS_K, ANALYSIS).unwrap();
    let s1 = rotation_rate(&peak_angles(&one, 1).unwrap()).unwrap();
    let s2 = rotation_rate(&peak_angles_folded(&two, 1, 2).unwrap()).unwrap();
    assert!(s2.abs() < s1.abs(), "N=2 {s2} vs N=1 {s1}");
}

#[test]
fn double_helix_lobes_are_antipodal_near_focus() {
    let cam = CameraConfig::nyuv2();
    let psis = uniform_psis(-10.0, 10.0, 5);
    let stack = build_stack_with(Element::Mask(&MaskSpec::new(2.0, 5, 0.9)), &cam, &psis, ANALYSIS_K, ANALYSIS).unwrap();
    for d in 0..psis.len() {
        let lobes = dominant_lobes(&stack.kernel(d, 1), 2).unwrap();
        let gap = angle_gap(lobes[0].angle, lobes[1].angle);
        assert!((gap - PI).abs().to_degrees() < 5.0, "plane {d}: {}", gap.to_degrees());
    }
}

#[test]
fn ambiguity_flags_mark_planes_past_the_window() {
    let cam = CameraConfig::nyuv2();
    let psis = uniform_psis(-20.0, 20.0, 9);
    let stack = build_stack_with(Element::Mask(&MaskSpec::new(2.0, 5, 0.9)), &cam, &psis, ANALYSIS_K, ANALYSIS).unwrap();
    let trace = peak_angles_folded(&stack, 1, 2).unwrap();
    let flags = ambiguity_flags(&trace, 2.0);
    let y = trace.unwrapped();
    let origin = y[4];
    for (d, f) in flags.iter().enumerate() {
        assert_eq!(*f, (y[d] - origin).abs() >= PI / 2.0);
    }
    assert!(!flags[4]);
}
