use ndarray::{s, Array2, Array3, Axis};
use rpsf_core::depth::{accuracy, estimate, interior_mask, DepthConfig, Scoring};
use rpsf_core::optics::{CameraConfig, PupilSampling};
use rpsf_core::optimize::{gradient, objective, objective_pairwise, optimize, OptimizeConfig, EPS_MIN, N_BOUNDS};
use rpsf_core::render::{render, LayeredScene};
use rpsf_core::rpsf::{build_stack, build_stack_with, uniform_psis, Element, PsfStack};
use rpsf_core::sensor::{simulate, SensorConfig};
use rpsf_core::synth::{random_quadrants, step_layout, textured_image};
use rpsf_core::MaskSpec;

const K: usize = 23;

fn depth_stack() -> PsfStack {
    build_stack(&MaskSpec::new(2.0, 5, 0.9), &CameraConfig::nyuv2(), &uniform_psis(-20.0, 20.0, 10), K).unwrap()
}

fn rendered(index: &Array2<usize>, stack: &PsfStack, seed: u64) -> Array3<f64> {
    let (h, w) = index.dim();
    let aif = textured_image(h, w, 3, 0.0, seed);
    render(&LayeredScene::new(aif, index.clone(), stack.depth()).unwrap(), stack).unwrap()
}

#[test]
fn constant_depth_is_recovered() {
    let stack = depth_stack();
    let index = Array2::from_elem((96, 96), 4);
    let img = rendered(&index, &stack, 1);
    let est = estimate(&img, &stack, &DepthConfig::matched(0.0)).unwrap();
    let acc = accuracy(&est.plane_index, &index, &interior_mask(&index, K)).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn step_scene_is_recovered_away_from_the_edge() {
    let stack = depth_stack();
    let cfg = DepthConfig::matched(0.0);
    let index = step_layout(96, 160, 2, 7);
    let img = rendered(&index, &stack, 2);
    let est = estimate(&img, &stack, &cfg).unwrap();
    let acc = accuracy(&est.plane_index, &index, &interior_mask(&index, cfg.window + K)).unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn untextured_input_has_no_cue() {
    let stack = depth_stack();
    let img = Array3::from_elem((48, 48, 3), 0.5);
    // the likelihood prior is the only thing that separates planes on a flat input
    let cfg = DepthConfig { noise_var: 0.0, ..Default::default() };
    let est = estimate(&img, &stack, &cfg).unwrap();
    assert!(est.plane_index.iter().all(|&p| p == 0));
    assert!(est.confidence.iter().all(|&c| c == 0.0));
    let residual = DepthConfig { scoring: Scoring::Residual, ..Default::default() };
    let est = estimate(&img, &stack, &residual).unwrap();
    assert!(est.plane_index.iter().all(|&p| p == 0));
    assert!(est.confidence.iter().all(|&c| c == 0.0));
}

fn noisy_accuracy(stack: &PsfStack, seed: u64, read_sigma: f64, scoring: Scoring) -> f64 {
    let index = random_quadrants(192, 192, stack.depth(), seed);
    let img = rendered(&index, stack, seed);
    let sensor = SensorConfig { read_sigma, photon_scale: f64::INFINITY, seed, ..Default::default() };
    let cfg = match scoring {
        Scoring::Likelihood => DepthConfig::matched(sensor.noise_variance(0.5)),
        Scoring::Residual => DepthConfig { scoring, ..Default::default() },
    };
    let rgb = simulate(&img, &sensor).unwrap().rgb;
    let est = estimate(&rgb, stack, &cfg).unwrap();
    accuracy(&est.plane_index, &index, &interior_mask(&index, cfg.window + K)).unwrap()
}

#[test]
fn more_noise_never_helps() {
    let stack = depth_stack();
    for scoring in [Scoring::Likelihood, Scoring::Residual] {
        let means: Vec<f64> = [0.0, 0.01, 0.02, 0.05]
            .iter()
            .map(|&sigma| (0..5).map(|seed| noisy_accuracy(&stack, seed, sigma, scoring)).sum::<f64>() / 5.0)
            .collect();
        assert!(means.windows(2).all(|w| w[1] <= w[0]), "{scoring:?}: {means:?}");
    }
}

fn single_channel(stack: &PsfStack, c: usize) -> PsfStack {
    let kernels = stack.kernels().slice(s![.., c..c + 1, .., ..]).to_owned();
    PsfStack::new(kernels, stack.psis().to_vec(), vec![stack.wavelengths()[c]]).unwrap()
}

#[test]
fn all_channels_beat_any_single_channel() {
    let stack = depth_stack();
    let cfg = DepthConfig::default();
    let mut joint = 0.0;
    let mut single = [0.0; 3];
    for seed in 0..3 {
        let index = random_quadrants(192, 192, stack.depth(), 100 + seed);
        let img = rendered(&index, &stack, seed);
        let rgb = simulate(&img, &SensorConfig { seed, ..Default::default() }).unwrap().rgb;
        let valid = interior_mask(&index, cfg.window + K);
        joint += accuracy(&estimate(&rgb, &stack, &cfg).unwrap().plane_index, &index, &valid).unwrap();
        for (c, acc) in single.iter_mut().enumerate() {
            let chan = rgb.slice(s![.., .., c..c + 1]).to_owned();
            *acc += accuracy(&estimate(&chan, &single_channel(&stack, c), &cfg).unwrap().plane_index, &index, &valid).unwrap();
        }
    }
    let best = single.iter().cloned().fold(0.0, f64::max);
    assert!(joint >= best, "joint {joint} vs single {single:?}");
}

#[test]
fn depth_is_deterministic() {
    let stack = depth_stack();
    let index = step_layout(64, 64, 1, 8);
    let img = rendered(&index, &stack, 5);
    let a = estimate(&img, &stack, &DepthConfig::default()).unwrap();
    let b = estimate(&img, &stack, &DepthConfig::default()).unwrap();
    assert_eq!(a, b);
}

fn quick_cfg() -> OptimizeConfig {
    OptimizeConfig { iters: 3, ..Default::default() }
}

/// Relative mismatch between the chain-rule directional derivative along
/// (1, 1) and central differences of J over the parameters themselves.
fn directional_mismatch(cam: &CameraConfig, n: f64, eps: f64) -> f64 {
    let cfg = OptimizeConfig::default();
    let spec = MaskSpec::new(n, 5, eps);
    let g = gradient(&spec, cam, &cfg).unwrap();
    let h = 1e-3;
    let at = |t: f64| objective(&MaskSpec { n_peaks: n + t, epsilon: eps + t, ..spec }, cam, &cfg).unwrap();
    let fd = (at(h) - at(-h)) / (2.0 * h);
    let chain = g[0] + g[1];
    (chain - fd).abs() / fd.abs()
}

const SANITY_POINTS: [(f64, f64); 4] = [(1.05, 0.1), (1.05, 0.5), (1.3, 0.7), (2.0, 0.9)];

#[test]
fn chain_rule_gradient_matches_parameter_differences() {
    let cam = CameraConfig::nyuv2();
    let worst: Vec<f64> = SANITY_POINTS.iter().map(|&(n, e)| directional_mismatch(&cam, n, e)).collect();
    assert!(worst.iter().all(|&r| r < 5e-2), "{worst:?}");
}

#[test]
fn chain_rule_gradient_matches_at_the_reference_wavelength() {
    // one channel at the design wavelength: the per-channel phase scale is 1,
    // so re-wrapping the perturbed phase is exact
    let mut cam = CameraConfig::nyuv2();
    cam.wavelengths_m = vec![536.67e-9];
    let worst: Vec<f64> = SANITY_POINTS.iter().map(|&(n, e)| directional_mismatch(&cam, n, e)).collect();
    assert!(worst.iter().all(|&r| r < 5e-2), "{worst:?}");
}

#[test]
fn trajectories_stay_feasible_and_ascend() {
    let cam = CameraConfig::nyuv2();
    for (n, e) in [(1.0, 0.1), (3.9, 0.95), (1.0, 1.0)] {
        let t = optimize(&MaskSpec::new(n, 5, e), &cam, &quick_cfg()).unwrap();
        for s in &t.steps {
            assert!((N_BOUNDS.0..=N_BOUNDS.1).contains(&s.n_peaks));
            assert!(s.epsilon >= EPS_MIN && s.epsilon <= 1.0);
        }
        assert!(t.steps.windows(2).all(|w| w[1].objective >= w[0].objective));
    }
}

#[test]
fn optimizer_is_deterministic() {
    let cam = CameraConfig::nyuv2();
    let spec = MaskSpec::new(1.5, 5, 0.6);
    assert_eq!(optimize(&spec, &cam, &quick_cfg()).unwrap(), optimize(&spec, &cam, &quick_cfg()).unwrap());
}

#[test]
fn zero_learning_rate_keeps_the_mask() {
    let cam = CameraConfig::nyuv2();
    let spec = MaskSpec::new(1.5, 5, 0.6);
    let t = optimize(&spec, &cam, &OptimizeConfig { lr: 0.0, ..quick_cfg() }).unwrap();
    assert_eq!(t.steps.len(), 4);
    assert!(t.steps.iter().all(|s| s.n_peaks == 1.5 && s.epsilon == 0.6 && s.objective == t.steps[0].objective));
    assert_eq!(t.final_spec, spec);
}

#[test]
fn single_helix_beats_plain_defocus() {
    let cam = CameraConfig::nyuv2();
    let psis = uniform_psis(-20.0, 20.0, 10);
    let helix = build_stack(&MaskSpec::new(1.0, 5, 0.9), &cam, &psis, K).unwrap();
    let clear = build_stack_with(Element::Clear, &cam, &psis, K, PupilSampling::default()).unwrap();
    let (jh, jc) = (objective_pairwise(&helix).unwrap(), objective_pairwise(&clear).unwrap());
    assert!(jh > jc, "{jh} vs {jc}");
    // a stack of identical kernels has nothing to tell apart
    let same = PsfStack::new(
        ndarray::stack(Axis(0), &[clear.kernels().index_axis(Axis(0), 0), clear.kernels().index_axis(Axis(0), 0)]).unwrap(),
        vec![0.0, 1.0],
        clear.wavelengths().to_vec(),
    )
    .unwrap();
    assert!(objective_pairwise(&same).unwrap().abs() < 1e-12);
}
