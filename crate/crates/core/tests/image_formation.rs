use ndarray::{s, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpsf_core::conv::{convolve_circular, convolve_reflect, reflect_index};
use rpsf_core::optics::{CameraConfig, PupilSampling};
use rpsf_core::render::{render, stack_channels, LayeredScene};
use rpsf_core::restore::{edgetaper, edgetaper_channel, psnr, restore_layered, wiener_deconv, WienerConfig};
use rpsf_core::rpsf::{build_stack_with, uniform_psis, Element, PsfStack};
use rpsf_core::sensor::{add_noise_unclamped, demosaic, mosaic, quantize, CfaPattern, SensorConfig};
use rpsf_core::synth::{natural_image, step_layout, textured_image};
use rpsf_core::MaskSpec;

fn small_stack(planes: usize, k: usize) -> PsfStack {
    let spec = MaskSpec::new(2.0, 5, 0.9);
    build_stack_with(Element::Mask(&spec), &CameraConfig::nyuv2(), &uniform_psis(-12.0, 12.0, planes), k, PupilSampling::scaled(128))
        .unwrap()
}

/// Direct evaluation of the layered model with reflect padding.
fn brute_force_render(aif: &Array3<f64>, index: &Array2<usize>, stack: &PsfStack) -> Array3<f64> {
    let (h, w, c) = aif.dim();
    let k = stack.size();
    let p = (k / 2) as isize;
    Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
        let kern = stack.kernel(index[[i, j]], ch);
        let mut acc = 0.0;
        for u in 0..k {
            for v in 0..k {
                let y = reflect_index(i as isize - u as isize + p, h);
                let x = reflect_index(j as isize - v as isize + p, w);
                acc += kern[[u, v]] * aif[[y, x, ch]];
            }
        }
        acc.max(0.0)
    })
}

#[test]
fn layered_render_matches_direct_evaluation() {
    let stack = small_stack(2, 23);
    for seed in 0..3 {
        let aif = textured_image(32, 32, 3, 0.0, seed);
        let index = step_layout(32, 32, 0, 1);
        let scene = LayeredScene::new(aif.clone(), index.clone(), 2).unwrap();
        let fast = render(&scene, &stack).unwrap();
        let slow = brute_force_render(&aif, &index, &stack);
        let diff = (&fast - &slow).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-9, "{diff}");
    }
}

#[test]
fn constant_depth_is_a_plain_convolution() {
    let stack = small_stack(3, 23);
    let aif = textured_image(48, 40, 3, 1.0, 7);
    let scene = LayeredScene::new(aif.clone(), Array2::from_elem((48, 40), 2), 3).unwrap();
    let out = render(&scene, &stack).unwrap();
    for c in 0..3 {
        let full = convolve_reflect(&aif.index_axis(Axis(2), c).to_owned(), &stack.kernel(2, c).to_owned());
        let diff = (&out.index_axis(Axis(2), c) - &full).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-6);
    }
}

#[test]
fn impulse_reproduces_the_kernel() {
    let stack = small_stack(1, 23);
    let mut aif = Array3::zeros((64, 64, 3));
    aif.slice_mut(s![32, 32, ..]).fill(1.0);
    let out = render(&LayeredScene::new(aif, Array2::zeros((64, 64)), 1).unwrap(), &stack).unwrap();
    for c in 0..3 {
        let window = out.slice(s![21..44, 21..44, c]);
        let diff = (&window - &stack.kernel(0, c)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-9);
    }
}

#[test]
fn brightness_is_preserved_for_constant_depth() {
    let stack = small_stack(4, 23);
    // periodic-friendly content: reflect padding keeps the mean when the image is symmetric enough,
    // so a constant image is the exact case
    let aif = Array3::from_elem((40, 40, 3), 0.37);
    for d in 0..4 {
        let out = render(&LayeredScene::new(aif.clone(), Array2::from_elem((40, 40), d), 4).unwrap(), &stack).unwrap();
        assert!((out.mean().unwrap() - 0.37).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn render_is_linear(a in 0.0f64..0.6, b in 0.0f64..0.4, seed in 0u64..1000) {
        let stack = small_stack(2, 9);
        let x = textured_image(24, 24, 3, 0.5, seed);
        let y = textured_image(24, 24, 3, 0.5, seed + 1);
        let index = step_layout(24, 24, 1, 0);
        let go = |img: Array3<f64>| render(&LayeredScene::new(img, index.clone(), 2).unwrap(), &stack).unwrap();
        let lhs = go(&x * a + &y * b);
        let rhs = go(x) * a + go(y) * b;
        let diff = (&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(diff < 1e-9, "{}", diff);
    }
}

#[test]
fn read_noise_moments() {
    let zero = Array2::zeros((1000, 1000));
    let cfg = SensorConfig { read_sigma: 0.01, photon_scale: f64::INFINITY, seed: 3, ..Default::default() };
    let n = add_noise_unclamped(&zero, &cfg);
    let mean = n.mean().unwrap();
    let std = n.std(0.0);
    assert!(mean.abs() < 1e-3);
    assert!((0.0095..=0.0105).contains(&std), "{std}");
}

#[test]
fn shot_and_read_noise_moments() {
    let v = 0.25;
    let field = Array2::from_elem((1000, 1000), v);
    for (read, photons) in [(0.0, 1000.0), (0.01, 1000.0), (0.02, 400.0)] {
        let cfg = SensorConfig { read_sigma: read, photon_scale: photons, seed: 11, ..Default::default() };
        let n = add_noise_unclamped(&field, &cfg);
        let expect = (v / photons + read * read).sqrt();
        assert!((n.mean().unwrap() - v).abs() < 1e-3);
        assert!((n.std(0.0) / expect - 1.0).abs() < 0.05);
    }
}

#[test]
fn noise_is_bit_identical_for_a_seed() {
    let field = Array2::from_elem((64, 64), 0.5);
    let cfg = SensorConfig { seed: 42, ..Default::default() };
    assert_eq!(add_noise_unclamped(&field, &cfg), add_noise_unclamped(&field, &cfg));
    // a crop sees the same noise as the full frame at the same positions
    let crop = add_noise_unclamped(&field.slice(s![..32, ..32]).to_owned(), &cfg);
    assert_eq!(crop, add_noise_unclamped(&field, &cfg).slice(s![..32, ..32]));
}

proptest! {
    #[test]
    fn quantization_is_idempotent_and_bounded(bits in 1u32..=16, vals in prop::collection::vec(0.0f64..=1.0, 16)) {
        let x = Array2::from_shape_vec((4, 4), vals).unwrap();
        let q = quantize(&x, bits);
        prop_assert_eq!(quantize(&q, bits), q.clone());
        let bound = 1.0 / (2.0 * ((1u64 << bits) - 1) as f64);
        prop_assert!(x.iter().zip(&q).all(|(a, b)| (a - b).abs() <= bound + 1e-15));
    }
}

#[test]
fn eight_bit_half_is_128() {
    assert_eq!(quantize(&Array2::from_elem((1, 1), 0.5), 8)[[0, 0]], 128.0 / 255.0);
}

#[test]
fn demosaic_reproduces_gray_ramps_inside() {
    for cfa in [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg] {
        for horizontal in [true, false] {
            let img = Array3::from_shape_fn((16, 20, 3), |(i, j, _)| 0.1 + 0.03 * if horizontal { j } else { i } as f64);
            let back = demosaic(&mosaic(&img, cfa).unwrap(), cfa).unwrap();
            let inner = (&back - &img).slice(s![2..14, 2..18, ..]).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(inner < 1e-12, "{cfa:?}: {inner}");
        }
    }
}

#[test]
fn demosaic_roundtrip_on_natural_image() {
    let img = natural_image(128, 128, 5);
    let back = demosaic(&mosaic(&img, CfaPattern::Rggb).unwrap(), CfaPattern::Rggb).unwrap();
    assert!(psnr(&back, &img).unwrap() > 30.0);
}

fn blurred_scene(h: usize, w: usize, seed: u64, stack: &PsfStack, plane: usize) -> (Array3<f64>, Array3<f64>) {
    let aif = textured_image(h, w, 3, 1.5, seed);
    let chans: Vec<Array2<f64>> = (0..3)
        .map(|c| convolve_circular(&aif.index_axis(Axis(2), c).to_owned(), &stack.kernel(plane, c).to_owned()))
        .collect();
    (aif, stack_channels(&chans).unwrap())
}

#[test]
fn wiener_is_linear() {
    let stack = small_stack(1, 15);
    let k = stack.kernel(0, 1).to_owned();
    let x = textured_image(32, 32, 3, 1.0, 1);
    let y = textured_image(32, 32, 3, 1.0, 2);
    let (a, b) = (0.7, -1.3);
    let lhs = wiener_deconv(&(&x * a + &y * b), &k, 1e-3).unwrap();
    let rhs = wiener_deconv(&x, &k, 1e-3).unwrap() * a + wiener_deconv(&y, &k, 1e-3).unwrap() * b;
    assert!((&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v)) < 1e-9);
}

#[test]
fn single_plane_restore_is_tapered_wiener() {
    let stack = small_stack(1, 15);
    let (_, img) = blurred_scene(48, 48, 3, &stack, 0);
    let cfg = WienerConfig { nsr: 1e-3, taper_width: 16 };
    let masks = vec![Array2::ones((48, 48))];
    let layered = restore_layered(&img, &stack, &masks, &cfg).unwrap();
    let mut plain = Array3::zeros((48, 48, 3));
    for c in 0..3 {
        let k = stack.kernel(0, c).to_owned();
        let t = edgetaper_channel(&img.index_axis(Axis(2), c).to_owned(), &k, 16).unwrap();
        let chan = wiener_deconv(&t.insert_axis(Axis(2)), &k, 1e-3).unwrap();
        plain.slice_mut(s![.., .., c]).assign(&chan.slice(s![.., .., 0]));
    }
    plain.mapv_inplace(|v| v.clamp(0.0, 1.0));
    assert_eq!(layered, plain);
}

#[test]
fn restore_respects_the_partition() {
    let a = small_stack(2, 15);
    let other = small_stack(3, 15);
    // same plane 0, different plane 1
    let mut mixed = a.kernels().clone();
    mixed.slice_mut(s![1, .., .., ..]).assign(&other.kernels().slice(s![1, .., .., ..]));
    let b = PsfStack::new(mixed, vec![0.0, 1.0], a.wavelengths().to_vec()).unwrap();
    let a = PsfStack::new(a.kernels().clone(), vec![0.0, 1.0], a.wavelengths().to_vec()).unwrap();
    let img = textured_image(40, 40, 3, 1.0, 9);
    let index = step_layout(40, 40, 0, 1);
    let masks: Vec<Array2<f64>> = (0..2).map(|d| index.mapv(|v| f64::from(u8::from(v == d)))).collect();
    let cfg = WienerConfig { nsr: 1e-2, taper_width: 0 };
    let ra = restore_layered(&img, &a, &masks, &cfg).unwrap();
    let rb = restore_layered(&img, &b, &masks, &cfg).unwrap();
    for ((i, j, c), v) in ra.indexed_iter() {
        if index[[i, j]] == 0 {
            assert_eq!(*v, rb[[i, j, c]]);
        }
    }
    assert_ne!(ra, rb);
}

#[test]
fn constant_depth_restoration_is_accurate() {
    let stack = small_stack(3, 15);
    let (aif, img) = blurred_scene(64, 64, 4, &stack, 1);
    let masks: Vec<Array2<f64>> = (0..3).map(|d| Array2::from_elem((64, 64), f64::from(u8::from(d == 1)))).collect();
    let out = restore_layered(&img, &stack, &masks, &WienerConfig { nsr: 1e-6, taper_width: 0 }).unwrap();
    assert!(psnr(&out, &aif).unwrap() > 35.0);
}

#[test]
fn taper_on_periodic_content_changes_less_than_the_blur() {
    let stack = small_stack(1, 15);
    let k = stack.kernel(0, 1).to_owned();
    let img = Array2::from_shape_fn((64, 64), |(i, j)| {
        0.5 + 0.2 * (2.0 * std::f64::consts::PI * i as f64 / 16.0).sin() * (2.0 * std::f64::consts::PI * j as f64 / 32.0).cos()
    });
    let tapered = edgetaper_channel(&img, &k, 15).unwrap();
    let blurred = convolve_circular(&img, &k);
    let rms = |d: Array2<f64>| (d.mapv(|v| v * v).mean().unwrap()).sqrt();
    let change = rms(&tapered - &img);
    let blur = rms(&blurred - &img);
    assert!(change < blur);
    assert!((&tapered - &img).iter().zip((&blurred - &img).iter()).all(|(t, b)| t.abs() <= b.abs() + 1e-15));
}

#[test]
fn taper_reduces_ringing_at_the_border() {
    let stack = small_stack(1, 15);
    let k = stack.kernel(0, 1).to_owned();
    // bright card touching the left and top edges, dark elsewhere: strongly non-periodic
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let aif = Array2::from_shape_fn((96, 96), |(i, j)| if i < 40 && j < 56 { 0.9 } else { 0.1 } + rng.gen_range(-0.02..0.02));
    let observed = convolve_reflect(&aif, &k);
    let band = |x: &Array2<f64>| {
        let mut e = 0.0;
        let mut n = 0.0;
        for ((i, j), v) in x.indexed_iter() {
            let d = i.min(j).min(95 - i).min(95 - j);
            if d < 15 {
                e += (v - aif[[i, j]]).powi(2);
                n += 1.0;
            }
        }
        (e / n).sqrt()
    };
    let img3 = observed.clone().insert_axis(Axis(2));
    let plain = wiener_deconv(&img3, &k, 1e-3).unwrap().index_axis(Axis(2), 0).to_owned();
    let tapered = wiener_deconv(&edgetaper(&img3, &k, 15).unwrap(), &k, 1e-3).unwrap().index_axis(Axis(2), 0).to_owned();
    assert!(band(&tapered) < band(&plain), "{} vs {}", band(&tapered), band(&plain));
}

/// Textbook 5×5 gradient-corrected filters, evaluated per pixel.
fn malvar_oracle(raw: &Array2<f64>, cfa: CfaPattern, i: usize, j: usize, want: usize) -> f64 {
    const G_AT_RB: [[f64; 5]; 5] =
        [[0., 0., -1., 0., 0.], [0., 0., 2., 0., 0.], [-1., 2., 4., 2., -1.], [0., 0., 2., 0., 0.], [0., 0., -1., 0., 0.]];
    const ROW_NEIGHBOUR: [[f64; 5]; 5] =
        [[0., 0., 0.5, 0., 0.], [0., -1., 0., -1., 0.], [-1., 4., 5., 4., -1.], [0., -1., 0., -1., 0.], [0., 0., 0.5, 0., 0.]];
    const DIAGONAL: [[f64; 5]; 5] =
        [[0., 0., -1.5, 0., 0.], [0., 2., 0., 2., 0.], [-1.5, 0., 6., 0., -1.5], [0., 2., 0., 2., 0.], [0., 0., -1.5, 0., 0.]];
    let here = cfa.channel_at(i, j);
    if here == want {
        return raw[[i, j]];
    }
    let apply = |k: &[[f64; 5]; 5], transpose: bool| {
        let mut acc = 0.0;
        for u in 0..5 {
            for v in 0..5 {
                let w = if transpose { k[v][u] } else { k[u][v] };
                acc += w * raw[[i + u - 2, j + v - 2]];
            }
        }
        acc / 8.0
    };
    if want == 1 {
        apply(&G_AT_RB, false)
    } else if here == 1 {
        // the wanted colour sits either left/right or above/below
        let horizontal = cfa.channel_at(i, j + 1) == want;
        apply(&ROW_NEIGHBOUR, !horizontal)
    } else {
        apply(&DIAGONAL, false)
    }
}

#[test]
fn demosaic_matches_textbook_filters() {
    let img = textured_image(24, 24, 3, 0.7, 13);
    for cfa in [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg] {
        let raw = mosaic(&img, cfa).unwrap();
        let ours = demosaic(&raw, cfa).unwrap();
        for i in 2..22 {
            for j in 2..22 {
                for c in 0..3 {
                    assert!((ours[[i, j, c]] - malvar_oracle(&raw, cfa, i, j, c).clamp(0.0, 1.0)).abs() < 1e-12, "{cfa:?} ({i},{j},{c})");
                }
            }
        }
    }
}
