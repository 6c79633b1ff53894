//! One function per pipeline stage. Every stage reads its inputs from disk
//! and writes its artifacts atomically into its output directory, together
//! with a run manifest.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::{Array2, Array3, Axis};
use rpsf_core::depth::{accuracy, depth_rmse, estimate, interior_mask, Scoring};
use rpsf_core::io::{
    encode_png, encode_stack, height_map_pfm, height_map_png, read_image, read_stack, write_atomic, write_pfm,
    write_stack_dir,
};
use rpsf_core::mask::{height_map, DEFAULT_LAMBDA_REF};
use rpsf_core::optics::defocus_from_distance;
use rpsf_core::optimize::{optimize, Objective};
use rpsf_core::render::{quantize_depth, render, LayeredScene};
use rpsf_core::restore::{crop_border, metrics, restore_layered, Metrics};
use rpsf_core::rpsf::{build_stack_with, Element};
use rpsf_core::sensor::simulate;
use rpsf_core::synth::{quadrant_layout, random_quadrants, step_layout, textured_image};
use rpsf_core::{CameraConfig, DepthConfig, MaskSpec, OptimizeConfig, PsfStack, PupilSampling, SensorConfig, WienerConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{depth_for_sensor, load_json, stage_seed, Layout, PlaneSpec};
use crate::error::{At, CliError, CliResult};
use crate::manifest::RunManifest;

/// Files a stage wrote plus named scalar results for summaries.
#[derive(Debug, Default)]
pub struct StageReport {
    pub outputs: Vec<PathBuf>,
    pub values: Vec<(String, f64)>,
}

impl StageReport {
    fn value(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn io_err(path: &Path, e: rpsf_core::Error) -> CliError {
    CliError::Other(format!("cannot write {}: {e}", path.display()))
}

fn put_bytes(dir: &Path, name: &str, bytes: &[u8], report: &mut StageReport) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(|e| io_err(&path, e))?;
    report.outputs.push(path.clone());
    Ok(path)
}

fn put_pfm(dir: &Path, name: &str, img: &Array3<f64>, report: &mut StageReport) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_pfm(&path, &img.view()).map_err(|e| io_err(&path, e))?;
    report.outputs.push(path.clone());
    Ok(path)
}

fn put_png(dir: &Path, name: &str, img: &Array3<f64>, bits: u8, report: &mut StageReport) -> CliResult<PathBuf> {
    let bytes = encode_png(&img.view(), bits).at(name)?;
    put_bytes(dir, name, &bytes, report)
}

fn put_json(dir: &Path, name: &str, value: &impl Serialize, report: &mut StageReport) -> CliResult<PathBuf> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push(b'\n');
    put_bytes(dir, name, &text, report)
}

fn put_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>], report: &mut StageReport) -> CliResult<PathBuf> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Other(format!("CSV: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(format!("CSV: {e}")))?;
    put_bytes(dir, name, &bytes, report)
}

/// Writes the stage manifest into `out` and returns the report.
pub fn finish(
    stage: &str,
    config: &impl Serialize,
    seed: u64,
    out: &Path,
    run_root: Option<&Path>,
    mut report: StageReport,
) -> CliResult<StageReport> {
    let manifest = RunManifest::build(stage, config, seed, out, run_root, &report.outputs)?;
    let path = manifest.write(out)?;
    report.outputs.push(path);
    Ok(report)
}

/// Plane indices travel as 16-bit gray PNG holding the raw index.
pub fn encode_plane_index(index: &Array2<usize>) -> CliResult<Vec<u8>> {
    if index.iter().any(|&v| v > 65535) {
        return Err(CliError::config("plane_index", "plane index exceeds 16 bits"));
    }
    let img = index.mapv(|v| v as f64 / 65535.0).insert_axis(Axis(2));
    encode_png(&img.view(), 16).at("plane_index")
}

pub fn read_plane_index(path: &Path) -> CliResult<Array2<usize>> {
    let img = read_image(path).at("plane_index")?;
    if img.dim().2 != 1 {
        return Err(CliError::config("plane_index", format!("{} must be a one-channel PNG", path.display())));
    }
    Ok(img.index_axis(Axis(2), 0).mapv(|v| (v * 65535.0).round() as usize))
}

fn load_stack(path: &Path) -> CliResult<PsfStack> {
    read_stack(path).at("--stack")
}

fn load_camera(path: &Option<PathBuf>) -> CliResult<CameraConfig> {
    match path {
        Some(p) => {
            let cam: CameraConfig = load_json(p, "camera")?;
            cam.validate().at("camera")?;
            Ok(cam)
        }
        None => Ok(CameraConfig::nyuv2()),
    }
}

fn masks_of(index: &Array2<usize>, planes: usize) -> CliResult<Vec<Array2<f64>>> {
    if let Some(bad) = index.iter().find(|&&p| p >= planes) {
        return Err(CliError::config("plane_index", format!("plane {bad} out of range for {planes} planes")));
    }
    Ok((0..planes).map(|d| index.mapv(|p| f64::from(u8::from(p == d)))).collect())
}

// ---------------------------------------------------------------- mask

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskArgs {
    /// MaskSpec JSON; overrides the shape flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub n_peaks: f64,
    #[arg(long, default_value_t = 5)]
    pub zones: u32,
    #[arg(long, default_value_t = 0.9)]
    pub epsilon: f64,
    /// Height-map grid edge in samples.
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    /// Samples spanned by the aperture diameter.
    #[arg(long, default_value_t = 400)]
    pub aperture_samples: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn mask_stage(args: &MaskArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let spec = match &args.spec {
        Some(p) => load_json::<MaskSpec>(p, "mask")?,
        None => MaskSpec::new(args.n_peaks, args.zones, args.epsilon),
    };
    spec.validate().at("mask")?;
    let sampling = PupilSampling { grid: args.grid, aperture_samples: args.aperture_samples };
    sampling.validate().at("--grid")?;
    let map = height_map(&spec, args.grid, 2.0 * spec.radius_m / args.aperture_samples as f64).at("mask")?;
    let mut report = StageReport::default();
    put_json(&args.out, "mask.json", &spec, &mut report)?;
    put_bytes(&args.out, "height.pfm", &height_map_pfm(&map).at("mask")?, &mut report)?;
    put_bytes(&args.out, "height.png", &height_map_png(&map, &spec).at("mask")?, &mut report)?;
    report.values.push(("max_height_m".into(), spec.max_height()));
    finish("mask", &json!({"args": args, "mask": spec}), 0, &args.out, run_root, report)
}

// ---------------------------------------------------------------- psf

pub const STACK_CONTAINER: &str = "stack.rpsf";

#[derive(Debug, Clone, Args, Serialize)]
pub struct PsfArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// CameraConfig JSON; defaults to the 16 mm / 4 mm / 5 m camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// `lo:hi:count` (inclusive) or a JSON array of Ψ values.
    #[arg(long, default_value = "-20:20:10", allow_hyphen_values = true)]
    pub psis: String,
    /// How `lo:hi:count` is spaced: psi, depth or disparity (meters for the latter two).
    #[arg(long, default_value = "psi")]
    pub spacing: String,
    #[arg(long, default_value_t = 23)]
    pub kernel: usize,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[arg(long, default_value_t = 400)]
    pub aperture_samples: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn psf_stage(args: &PsfArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let spec: MaskSpec = load_json(&args.mask, "mask")?;
    spec.validate().at("mask")?;
    let cam = load_camera(&args.camera)?;
    let psis = PlaneSpec::parse_cli(&args.psis, &args.spacing)?.psis(&cam, spec.lambda_ref_m)?;
    if args.kernel % 2 == 0 {
        return Err(CliError::config("--kernel", "kernel size must be odd"));
    }
    let sampling = PupilSampling { grid: args.grid, aperture_samples: args.aperture_samples };
    let stack = build_stack_with(Element::Mask(&spec), &cam, &psis, args.kernel, sampling).at("--kernel")?;
    let mut report = StageReport::default();
    report.outputs.extend(write_stack_dir(&stack, &args.out).map_err(|e| io_err(&args.out, e))?);
    put_bytes(&args.out, STACK_CONTAINER, &encode_stack(&stack), &mut report)?;
    report.values.push(("planes".into(), psis.len() as f64));
    finish("psf", &json!({"args": args, "mask": spec, "camera": cam, "psis": psis}), 0, &args.out, run_root, report)
}

// ---------------------------------------------------------------- render

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScale {
    pub scale_m: f64,
    #[serde(default)]
    pub offset_m: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RenderArgs {
    /// PSF stack: directory, manifest or container.
    #[arg(long)]
    pub stack: PathBuf,
    /// All-in-focus image (PNG or PFM).
    #[arg(long)]
    pub aif: Option<PathBuf>,
    /// Depth map in meters (PFM), or 16-bit PNG with --depth-scale.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// JSON {"scale_m", "offset_m"} mapping PNG values in [0, 1] to meters.
    #[arg(long)]
    pub depth_scale: Option<PathBuf>,
    /// Plane-index PNG instead of a depth map.
    #[arg(long)]
    pub plane_index: Option<PathBuf>,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Reference wavelength the stack's Ψ values refer to.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_REF)]
    pub lambda_ref: f64,
    /// Synthetic scene `HxW` instead of --aif.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// random-quadrants, step:LEFT:RIGHT or constant:PLANE.
    #[arg(long, default_value = "random-quadrants")]
    pub layout: String,
    #[arg(long, default_value_t = 1.0)]
    pub texture_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn parse_layout(text: &str) -> CliResult<Layout> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::config("--layout", format!("expected random-quadrants, step:L:R or constant:D, got {text:?}"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        ["random-quadrants"] => Ok(Layout::RandomQuadrants),
        ["step", l, r] => Ok(Layout::Step { left: num(l)?, right: num(r)? }),
        ["constant", d] => Ok(Layout::Constant { plane: num(d)? }),
        _ => Err(bad()),
    }
}

pub fn layout_index(layout: Layout, h: usize, w: usize, planes: usize, seed: u64) -> Array2<usize> {
    match layout {
        Layout::RandomQuadrants => random_quadrants(h, w, planes, seed),
        Layout::Step { left, right } => step_layout(h, w, left, right),
        Layout::Constant { plane } => quadrant_layout(h, w, [plane; 4]),
    }
}

fn parse_size(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::config("--synthetic", format!("expected HxW, got {text:?}"));
    let (h, w) = text.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn three_channels(img: Array3<f64>, what: &str) -> CliResult<Array3<f64>> {
    match img.dim().2 {
        3 => Ok(img),
        1 => {
            let g = img.index_axis(Axis(2), 0).to_owned();
            Ok(ndarray::stack(Axis(2), &[g.view(), g.view(), g.view()]).expect("same shapes"))
        }
        c => Err(CliError::config(what, format!("expected 1 or 3 channels, got {c}"))),
    }
}

pub fn render_stage(args: &RenderArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let stack = load_stack(&args.stack)?;
    let d = stack.depth();
    let seed = stage_seed(args.seed, "render");
    let (aif, index) = match (&args.synthetic, &args.aif) {
        (Some(size), None) => {
            let (h, w) = parse_size(size)?;
            let layout = parse_layout(&args.layout)?;
            let index = layout_index(layout, h, w, d, seed);
            (textured_image(h, w, stack.channels(), args.texture_sigma, seed), index)
        }
        (None, Some(path)) => {
            let aif = read_image(path).at("--aif")?;
            let aif = if stack.channels() == 3 { three_channels(aif, "--aif")? } else { aif };
            let (h, w, _) = aif.dim();
            let index = match (&args.plane_index, &args.depth) {
                (Some(p), None) => read_plane_index(p)?,
                (None, Some(p)) => {
                    let depth = read_depth(p, &args.depth_scale)?;
                    let cam = load_camera(&args.camera)?;
                    let psi = depth_to_psi(&depth, &cam, args.lambda_ref)?;
                    quantize_depth(&psi, stack.psis()).at("--depth")?.0
                }
                _ => return Err(CliError::config("--depth", "give exactly one of --depth and --plane-index")),
            };
            if index.dim() != (h, w) {
                return Err(CliError::config("--depth", format!("depth is {:?}, image is {h}x{w}", index.dim())));
            }
            (aif, index)
        }
        _ => return Err(CliError::config("--aif", "give exactly one of --aif and --synthetic")),
    };
    let scene = LayeredScene::new(aif, index, d).at("--aif")?;
    let coded = render(&scene, &stack).at("--stack")?;
    let mut report = StageReport::default();
    put_pfm(&args.out, "aif.pfm", scene.aif(), &mut report)?;
    put_bytes(&args.out, "plane_index.png", &encode_plane_index(scene.plane_index())?, &mut report)?;
    put_pfm(&args.out, "coded.pfm", &coded, &mut report)?;
    finish("render", args, args.seed, &args.out, run_root, report)
}

fn read_depth(path: &Path, scale: &Option<PathBuf>) -> CliResult<Array2<f64>> {
    let img = read_image(path).at("--depth")?;
    let plane = img.index_axis(Axis(2), 0).to_owned();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    match (is_png, scale) {
        (true, Some(s)) => {
            let s: DepthScale = load_json(s, "depth_scale")?;
            Ok(plane.mapv(|v| s.offset_m + s.scale_m * v))
        }
        (true, None) => Err(CliError::config("--depth-scale", "a PNG depth map needs --depth-scale")),
        (false, _) => Ok(plane),
    }
}

/// Per-pixel defocus, so planes are matched in the same units as the stack.
pub fn depth_to_psi(depth: &Array2<f64>, cam: &CameraConfig, lambda_ref: f64) -> CliResult<Array2<f64>> {
    let mut out = Array2::zeros(depth.dim());
    for (o, &z) in out.iter_mut().zip(depth) {
        *o = defocus_from_distance(cam, z, lambda_ref).at("--depth")?.psi;
    }
    Ok(out)
}

// ---------------------------------------------------------------- sense

#[derive(Debug, Clone, Args, Serialize)]
pub struct SenseArgs {
    /// Linear RGB image (PFM).
    #[arg(long)]
    pub input: PathBuf,
    /// SensorConfig JSON; its seed is replaced by the stage seed.
    #[arg(long)]
    pub sensor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the noisy mosaic before quantization.
    #[arg(long)]
    pub dump_analog: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn sense_stage(args: &SenseArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let mut cfg: SensorConfig = match &args.sensor {
        Some(p) => load_json(p, "sensor")?,
        None => SensorConfig::default(),
    };
    cfg.seed = stage_seed(args.seed, "sense");
    cfg.validate().at("sensor")?;
    let img = three_channels(read_image(&args.input).at("--input")?, "--input")?;
    let out = simulate(&img, &cfg).at("--input")?;
    let mut report = StageReport::default();
    let bits = if cfg.adc_bits <= 8 { 8 } else { 16 };
    put_png(&args.out, "sensed.png", &out.rgb, bits, &mut report)?;
    put_pfm(&args.out, "sensed.pfm", &out.rgb, &mut report)?;
    if args.dump_analog {
        put_pfm(&args.out, "analog.pfm", &out.analog.insert_axis(Axis(2)), &mut report)?;
    }
    finish("sense", &json!({"args": args, "sensor": cfg}), args.seed, &args.out, run_root, report)
}

// ---------------------------------------------------------------- deblur

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeblurArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    /// Plane-index PNG selecting the kernel per pixel.
    #[arg(long)]
    pub plane_index: Option<PathBuf>,
    /// Constant plane, when no plane-index map is given.
    #[arg(long)]
    pub plane: Option<usize>,
    #[arg(long, default_value_t = WienerConfig::default().nsr)]
    pub nsr: f64,
    /// Edgetaper width in pixels (0 disables; otherwise at least the kernel size).
    #[arg(long, default_value_t = 0)]
    pub taper: usize,
    /// Ground truth for the metrics CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Border excluded from the metrics.
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn metrics_row(name: &str, m: &Metrics) -> Vec<String> {
    vec![name.to_string(), format!("{:.6}", m.psnr), format!("{:.6}", m.ssim), format!("{:.8}", m.rmse)]
}

fn cropped_metrics(a: &Array3<f64>, b: &Array3<f64>, border: usize) -> CliResult<Metrics> {
    let (a, b) = (crop_border(a, border).at("--border")?, crop_border(b, border).at("--border")?);
    metrics(&a, &b).at("--truth")
}

pub fn deblur_stage(args: &DeblurArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let stack = load_stack(&args.stack)?;
    let img = read_image(&args.input).at("--input")?;
    let (h, w, _) = img.dim();
    let index = match (&args.plane_index, args.plane) {
        (Some(p), None) => read_plane_index(p)?,
        (None, Some(d)) => Array2::from_elem((h, w), d),
        (None, None) if stack.depth() == 1 => Array2::zeros((h, w)),
        _ => return Err(CliError::config("--plane-index", "give exactly one of --plane-index and --plane")),
    };
    if index.dim() != (h, w) {
        return Err(CliError::config("--plane-index", format!("map is {:?}, image is {h}x{w}", index.dim())));
    }
    let cfg = WienerConfig { nsr: args.nsr, taper_width: args.taper };
    cfg.validate(h, w).at("--nsr")?;
    let restored = restore_layered(&img, &stack, &masks_of(&index, stack.depth())?, &cfg).at("--taper")?;
    let mut report = StageReport::default();
    put_pfm(&args.out, "restored.pfm", &restored, &mut report)?;
    put_png(&args.out, "restored.png", &restored, 8, &mut report)?;
    if let Some(t) = &args.truth {
        let truth = read_image(t).at("--truth")?;
        let m_in = cropped_metrics(&img, &truth, args.border)?;
        let m_out = cropped_metrics(&restored, &truth, args.border)?;
        let rows = vec![metrics_row(&file_name(&args.input), &m_in), metrics_row("restored.pfm", &m_out)];
        put_csv(&args.out, "metrics.csv", &["file", "psnr_db", "ssim", "rmse"], &rows, &mut report)?;
        report.values.extend([
            ("input_psnr_db".to_string(), m_in.psnr),
            ("psnr_db".to_string(), m_out.psnr),
            ("ssim".to_string(), m_out.ssim),
            ("rmse".to_string(), m_out.rmse),
        ]);
    }
    finish("deblur", &json!({"args": args, "wiener": cfg}), 0, &args.out, run_root, report)
}

// ---------------------------------------------------------------- depth

#[derive(Debug, Clone, Args, Serialize)]
pub struct DepthArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    /// SensorConfig JSON the input came from; picks nsr and noise variance for its noise.
    #[arg(long)]
    pub sensor: Option<PathBuf>,
    #[arg(long)]
    pub nsr: Option<f64>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// likelihood or residual.
    #[arg(long)]
    pub scoring: Option<String>,
    #[arg(long)]
    pub subplane: bool,
    /// Ground-truth plane-index PNG.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Edge band excluded from accuracy; defaults to window + K.
    #[arg(long)]
    pub band: Option<usize>,
    #[arg(long)]
    pub dump_residuals: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

impl DepthArgs {
    pub fn resolve(&self) -> CliResult<DepthConfig> {
        let mut cfg = match &self.sensor {
            Some(p) => {
                let s: SensorConfig = load_json(p, "sensor")?;
                s.validate().at("sensor")?;
                depth_for_sensor(&s)
            }
            None => DepthConfig::default(),
        };
        if let Some(v) = self.nsr {
            cfg.nsr = v;
        }
        if let Some(v) = self.noise_var {
            cfg.noise_var = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(s) = &self.scoring {
            cfg.scoring = match s.as_str() {
                "likelihood" => Scoring::Likelihood,
                "residual" => Scoring::Residual,
                other => return Err(CliError::config("--scoring", format!("unknown scoring {other:?}"))),
            };
        }
        cfg.subplane = self.subplane;
        cfg.validate().at("depth")?;
        Ok(cfg)
    }
}

pub fn depth_stage(args: &DepthArgs, run_root: Option<&Path>) -> CliResult<StageReport> {
    let cfg = args.resolve()?;
    let stack = load_stack(&args.stack)?;
    let img = read_image(&args.input).at("--input")?;
    let est = estimate(&img, &stack, &cfg).at("--input")?;
    let mut report = StageReport::default();
    put_bytes(&args.out, "plane_index.png", &encode_plane_index(&est.plane_index)?, &mut report)?;
    put_pfm(&args.out, "confidence.pfm", &est.confidence.clone().insert_axis(Axis(2)), &mut report)?;
    if let Some(c) = &est.continuous {
        put_pfm(&args.out, "continuous.pfm", &c.clone().insert_axis(Axis(2)), &mut report)?;
    }
    if args.dump_residuals {
        for (d, r) in est.residuals.axis_iter(Axis(0)).enumerate() {
            put_pfm(&args.out, &format!("residual_d{d:02}.pfm"), &r.to_owned().insert_axis(Axis(2)), &mut report)?;
        }
    }
    let mut header = vec!["pixels", "mean_confidence"];
    let mut row = vec![est.plane_index.len().to_string(), format!("{:.6e}", est.confidence.mean().unwrap_or(0.0))];
    if let Some(t) = &args.truth {
        let truth = read_plane_index(t)?;
        let band = args.band.unwrap_or(cfg.window + stack.size());
        let valid = interior_mask(&truth, band);
        let acc = accuracy(&est.plane_index, &truth, &valid).at("--truth")?;
        let planes: Vec<f64> = (0..stack.depth()).map(|d| d as f64).collect();
        let rmse_planes = depth_rmse(&est.plane_index, &truth, &planes).at("--truth")?;
        let rmse_psi = depth_rmse(&est.plane_index, &truth, stack.psis()).at("--truth")?;
        header.extend(["interior_pixels", "interior_accuracy", "rmse_planes", "rmse_psi"]);
        row.extend([
            valid.iter().filter(|&&v| v).count().to_string(),
            format!("{acc:.6}"),
            format!("{rmse_planes:.6}"),
            format!("{rmse_psi:.6}"),
        ]);
        report.values.extend([
            ("interior_accuracy".to_string(), acc),
            ("rmse_planes".to_string(), rmse_planes),
            ("rmse_psi".to_string(), rmse_psi),
        ]);
    }
    put_csv(&args.out, "depth.csv", &header, &[row], &mut report)?;
    finish("depth", &json!({"args": args, "depth": cfg}), 0, &args.out, run_root, report)
}

// ---------------------------------------------------------------- optimize

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimizeArgs {
    #[arg(long, default_value_t = 1.0)]
    pub init_n: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_eps: f64,
    #[arg(long, default_value_t = 5)]
    pub zones: u32,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// pairwise-dissimilarity or rotation-spread.
    #[arg(long, default_value = "pairwise-dissimilarity")]
    pub objective: String,
    #[arg(long, default_value = "-20:20:10", allow_hyphen_values = true)]
    pub psis: String,
    #[arg(long, default_value_t = 23)]
    pub kernel: usize,
    /// Pupil grid used while optimizing.
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn optimize_stage(args: &OptimizeArgs) -> CliResult<StageReport> {
    let cam = load_camera(&args.camera)?;
    let objective: Objective = args.objective.parse().at("--objective")?;
    let spec0 = MaskSpec::new(args.init_n, args.zones, args.init_eps);
    spec0.validate().at("--init-eps")?;
    let psis = PlaneSpec::parse_cli(&args.psis, "psi")?.psis(&cam, spec0.lambda_ref_m)?;
    let cfg = OptimizeConfig {
        lr: args.lr,
        iters: args.iters,
        psis,
        objective,
        kernel_size: args.kernel,
        sampling: PupilSampling::scaled(args.grid),
        ..Default::default()
    };
    cfg.validate().at("--iters")?;
    let traj = optimize(&spec0, &cam, &cfg).at("--init-n")?;
    if traj.stalled {
        log::info!("line search stalled after {} accepted steps", traj.steps.len() - 1);
    }
    let rows: Vec<Vec<String>> = traj
        .steps
        .iter()
        .map(|s| vec![s.iter.to_string(), format!("{:.10}", s.n_peaks), format!("{:.10}", s.epsilon), format!("{:.10}", s.objective)])
        .collect();
    let mut report = StageReport::default();
    put_csv(&args.out, "trajectory.csv", &["iter", "N", "eps", "J"], &rows, &mut report)?;
    let exported = traj.final_spec.rounded();
    put_json(&args.out, "mask.json", &exported, &mut report)?;
    put_json(&args.out, "mask_continuous.json", &traj.final_spec, &mut report)?;
    let sampling = PupilSampling::default();
    let map = height_map(&exported, sampling.grid, 2.0 * exported.radius_m / sampling.aperture_samples as f64).at("mask")?;
    put_bytes(&args.out, "height.pfm", &height_map_pfm(&map).at("mask")?, &mut report)?;
    let last = traj.steps.last().expect("trajectory starts with the initial mask");
    report.values.extend([
        ("final_n".to_string(), last.n_peaks),
        ("final_eps".to_string(), last.epsilon),
        ("final_j".to_string(), last.objective),
        ("stalled".to_string(), f64::from(u8::from(traj.stalled))),
    ]);
    finish("optimize", &json!({"args": args, "optimize": cfg}), 0, &args.out, None, report)
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    /// Image under test.
    #[arg(long)]
    pub a: PathBuf,
    /// Reference image.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    /// Directory for metrics.csv and the manifest; stdout only when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn metrics_stage(args: &MetricsArgs) -> CliResult<StageReport> {
    let a = read_image(&args.a).at("--a")?;
    let b = read_image(&args.b).at("--b")?;
    let m = cropped_metrics(&a, &b, args.border)?;
    let row = metrics_row(&file_name(&args.a), &m);
    println!("file,psnr_db,ssim,rmse\n{}", row.join(","));
    let mut report = StageReport::default();
    report.values.extend([("psnr_db".to_string(), m.psnr), ("ssim".to_string(), m.ssim), ("rmse".to_string(), m.rmse)]);
    match &args.out {
        Some(out) => {
            put_csv(out, "metrics.csv", &["file", "psnr_db", "ssim", "rmse"], &[row], &mut report)?;
            finish("metrics", args, 0, out, None, report)
        }
        None => Ok(report),
    }
}

// ---------------------------------------------------------------- run-all

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunAllArgs {
    /// PipelineConfig JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// mask → psf → render → sense → deblur → depth, each stage reading the
/// previous stage's files.
pub fn run_all(args: &RunAllArgs) -> CliResult<StageReport> {
    use crate::config::{PipelineConfig, SceneSpec};
    let cfg = PipelineConfig::load(&args.config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = &args.out;
    let dir = |s: &str| out.join(s);
    let mut all = StageReport::default();

    let mut inputs = StageReport::default();
    let mask_file = put_json(&dir("inputs"), "mask.json", &cfg.mask, &mut inputs)?;
    let camera_file = put_json(&dir("inputs"), "camera.json", &cfg.camera, &mut inputs)?;
    let sensor_file = put_json(&dir("inputs"), "sensor.json", &cfg.sensor, &mut inputs)?;
    all.outputs.extend(inputs.outputs);

    let mask = mask_stage(&MaskArgs {
        spec: Some(mask_file.clone()),
        n_peaks: cfg.mask.n_peaks,
        zones: cfg.mask.zones,
        epsilon: cfg.mask.epsilon,
        grid: cfg.sampling.grid,
        aperture_samples: cfg.sampling.aperture_samples,
        out: dir("mask"),
    }, Some(out))?;
    all.outputs.extend(mask.outputs);

    let psis = cfg.psis()?;
    let psf = psf_stage(&PsfArgs {
        mask: dir("mask").join("mask.json"),
        camera: Some(camera_file.clone()),
        psis: serde_json::to_string(&psis).expect("floats serialize"),
        spacing: "psi".into(),
        kernel: cfg.kernel_size,
        grid: cfg.sampling.grid,
        aperture_samples: cfg.sampling.aperture_samples,
        out: dir("psf"),
    }, Some(out))?;
    all.outputs.extend(psf.outputs);
    let stack_path = dir("psf").join(STACK_CONTAINER);

    let mut render_args = RenderArgs {
        stack: stack_path.clone(),
        aif: None,
        depth: None,
        depth_scale: None,
        plane_index: None,
        camera: Some(camera_file),
        lambda_ref: cfg.mask.lambda_ref_m,
        synthetic: None,
        layout: "random-quadrants".into(),
        texture_sigma: 1.0,
        seed: cfg.seed,
        out: dir("render"),
    };
    match &cfg.scene {
        SceneSpec::Synthetic { height, width, texture_sigma, layout } => {
            render_args.synthetic = Some(format!("{height}x{width}"));
            render_args.texture_sigma = *texture_sigma;
            render_args.layout = match layout {
                Layout::RandomQuadrants => "random-quadrants".into(),
                Layout::Step { left, right } => format!("step:{left}:{right}"),
                Layout::Constant { plane } => format!("constant:{plane}"),
            };
        }
        SceneSpec::Files { aif, depth, depth_scale_m } => {
            render_args.aif = Some(base.join(aif));
            render_args.depth = Some(base.join(depth));
            if let Some(scale) = depth_scale_m {
                let mut tmp = StageReport::default();
                let p = put_json(&dir("inputs"), "depth_scale.json", &DepthScale { scale_m: *scale, offset_m: 0.0 }, &mut tmp)?;
                all.outputs.extend(tmp.outputs);
                render_args.depth_scale = Some(p);
            }
        }
    }
    let render = render_stage(&render_args, Some(out))?;
    all.outputs.extend(render.outputs);

    let sense = sense_stage(&SenseArgs {
        input: dir("render").join("coded.pfm"),
        sensor: Some(sensor_file),
        seed: cfg.seed,
        dump_analog: true,
        out: dir("sense"),
    }, Some(out))?;
    all.outputs.extend(sense.outputs);

    let deblur = deblur_stage(&DeblurArgs {
        input: dir("sense").join("sensed.pfm"),
        stack: stack_path.clone(),
        plane_index: Some(dir("render").join("plane_index.png")),
        plane: None,
        nsr: cfg.wiener_config().nsr,
        taper: cfg.wiener_config().taper_width,
        truth: Some(dir("render").join("aif.pfm")),
        border: 0,
        out: dir("deblur"),
    }, Some(out))?;
    all.outputs.extend(deblur.outputs.iter().cloned());

    let dc = cfg.depth_config();
    let depth = depth_stage(&DepthArgs {
        input: dir("sense").join("sensed.pfm"),
        stack: stack_path,
        sensor: None,
        nsr: Some(dc.nsr),
        noise_var: Some(dc.noise_var),
        window: Some(dc.window),
        scoring: Some(match dc.scoring {
            Scoring::Likelihood => "likelihood".into(),
            Scoring::Residual => "residual".into(),
        }),
        subplane: dc.subplane,
        truth: Some(dir("render").join("plane_index.png")),
        band: None,
        dump_residuals: false,
        out: dir("depth"),
    }, Some(out))?;
    all.outputs.extend(depth.outputs.iter().cloned());

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let rows = vec![
        vec!["sense".into(), "psnr_db".into(), fmt(deblur.value("input_psnr_db"))],
        vec!["deblur".into(), "psnr_db".into(), fmt(deblur.value("psnr_db"))],
        vec!["deblur".into(), "ssim".into(), fmt(deblur.value("ssim"))],
        vec!["deblur".into(), "rmse".into(), fmt(deblur.value("rmse"))],
        vec!["depth".into(), "interior_accuracy".into(), fmt(depth.value("interior_accuracy"))],
        vec!["depth".into(), "rmse_planes".into(), fmt(depth.value("rmse_planes"))],
        vec!["depth".into(), "rmse_psi".into(), fmt(depth.value("rmse_psi"))],
    ];
    let mut summary = StageReport::default();
    put_csv(out, "summary.csv", &["stage", "metric", "value"], &rows, &mut summary)?;
    all.outputs.extend(summary.outputs);
    all.values = deblur.values.into_iter().chain(depth.values).collect();
    finish("run-all", &cfg, cfg.seed, out, Some(out), all)
}
