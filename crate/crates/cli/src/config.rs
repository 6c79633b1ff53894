use std::path::{Path, PathBuf};

use rpsf_core::optics::defocus_from_distance;
use rpsf_core::rpsf::uniform_psis;
use rpsf_core::{CameraConfig, DepthConfig, MaskSpec, PupilSampling, SensorConfig, WienerConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, At, CliError, CliResult};

/// Parses JSON, reporting schema errors with the offending path.
pub fn parse_json<T: DeserializeOwned>(text: &str, root: &str) -> CliResult<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (root.is_empty(), inner.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => root.to_string(),
            (false, p) => format!("{root}.{p}"),
        };
        CliError::config(path, e.into_inner())
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path, root: &str) -> CliResult<T> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::config(root, format!("{} is not UTF-8", path.display())))?;
    parse_json(&text, root)
}

/// How the depth planes are laid out. Depth and disparity spacings take
/// distances in meters and are converted to defocus at the reference
/// wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "spacing", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlaneSpec {
    Psi { lo: f64, hi: f64, count: usize },
    Depth { near_m: f64, far_m: f64, count: usize },
    Disparity { near_m: f64, far_m: f64, count: usize },
    List { psis: Vec<f64> },
}

impl Default for PlaneSpec {
    fn default() -> Self {
        PlaneSpec::Psi { lo: -20.0, hi: 20.0, count: 10 }
    }
}

impl PlaneSpec {
    /// Ascending defocus values.
    pub fn psis(&self, cam: &CameraConfig, lambda_ref: f64) -> CliResult<Vec<f64>> {
        let distances = |zs: Vec<f64>| -> CliResult<Vec<f64>> {
            zs.iter().map(|&z| defocus_from_distance(cam, z, lambda_ref).map(|d| d.psi)).collect::<rpsf_core::Result<_>>().at("planes")
        };
        let mut psis = match *self {
            PlaneSpec::Psi { lo, hi, count } => uniform_psis(lo, hi, count),
            PlaneSpec::Depth { near_m, far_m, count } => distances(uniform_psis(near_m, far_m, count))?,
            PlaneSpec::Disparity { near_m, far_m, count } => {
                if !(near_m > 0.0 && far_m > 0.0) {
                    return Err(CliError::config("planes", "disparity spacing needs positive distances"));
                }
                distances(uniform_psis(1.0 / near_m, 1.0 / far_m, count).into_iter().map(|v| 1.0 / v).collect())?
            }
            PlaneSpec::List { ref psis } => psis.clone(),
        };
        if psis.first() > psis.last() {
            psis.reverse();
        }
        if psis.is_empty() || psis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::config("planes", format!("plane defocus values must be distinct, got {psis:?}")));
        }
        Ok(psis)
    }

    /// `lo:hi:count` or a JSON array.
    pub fn parse_cli(text: &str, spacing: &str) -> CliResult<Self> {
        let t = text.trim();
        if t.starts_with('[') {
            let psis: Vec<f64> = parse_json(t, "--psis")?;
            return Ok(PlaneSpec::List { psis });
        }
        let parts: Vec<&str> = t.split(':').collect();
        let bad = || CliError::config("--psis", format!("expected lo:hi:count or a JSON array, got {text:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        Ok(match spacing {
            "psi" => PlaneSpec::Psi { lo, hi, count },
            "depth" => PlaneSpec::Depth { near_m: lo, far_m: hi, count },
            "disparity" => PlaneSpec::Disparity { near_m: lo, far_m: hi, count },
            other => return Err(CliError::config("--spacing", format!("unknown spacing {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Layout {
    RandomQuadrants,
    Step { left: usize, right: usize },
    Constant { plane: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneSpec {
    /// Seeded texture on a plane layout.
    Synthetic { height: usize, width: usize, texture_sigma: f64, layout: Layout },
    /// All-in-focus image plus a depth map in meters (PFM, or 16-bit PNG
    /// mapped through `depth_scale_m`).
    Files { aif: PathBuf, depth: PathBuf, depth_scale_m: Option<f64> },
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Synthetic { height: 256, width: 256, texture_sigma: 1.0, layout: Layout::RandomQuadrants }
    }
}

fn default_kernel() -> usize {
    23
}

/// End-to-end configuration read by `run-all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub mask: MaskSpec,
    #[serde(default = "CameraConfig::nyuv2")]
    pub camera: CameraConfig,
    #[serde(default)]
    pub sampling: PupilSampling,
    #[serde(default)]
    pub planes: PlaneSpec,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub sensor: SensorConfig,
    /// Absent: noise-to-signal ratio matched to the sensor noise.
    #[serde(default)]
    pub wiener: Option<WienerConfig>,
    /// Absent: see [`PipelineConfig::depth_config`].
    #[serde(default)]
    pub depth: Option<DepthConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let cfg: Self = load_json(path, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section and the cross-section dimensions.
    pub fn validate(&self) -> CliResult<()> {
        self.mask.validate().at("mask")?;
        self.camera.validate().at("camera")?;
        self.sampling.validate().at("sampling")?;
        self.sensor.validate().at("sensor")?;
        if self.camera.wavelengths_m.len() != 3 {
            return Err(CliError::config(
                "camera.wavelengths_m",
                format!("the sensor needs 3 channels, camera has {}", self.camera.wavelengths_m.len()),
            ));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size > self.sampling.grid {
            return Err(CliError::config("kernel_size", format!("must be odd and at most the pupil grid, got {}", self.kernel_size)));
        }
        let d = self.psis()?.len();
        if let Some(depth) = &self.depth {
            depth.validate().at("depth")?;
            if d < 2 {
                return Err(CliError::config("planes", "depth estimation needs at least 2 planes"));
            }
        }
        match &self.scene {
            SceneSpec::Synthetic { height, width, layout, .. } => {
                if height % 2 != 0 || width % 2 != 0 || *height < 2 * self.kernel_size || *width < 2 * self.kernel_size {
                    return Err(CliError::config("scene", "height and width must be even and at least twice the kernel size"));
                }
                let used = match *layout {
                    Layout::RandomQuadrants => 0,
                    Layout::Step { left, right } => left.max(right),
                    Layout::Constant { plane } => plane,
                };
                if used >= d {
                    return Err(CliError::config("scene.layout", format!("plane {used} out of range for {d} planes")));
                }
            }
            SceneSpec::Files { depth_scale_m, .. } => {
                if depth_scale_m.is_some_and(|s| !(s > 0.0)) {
                    return Err(CliError::config("scene.depth_scale_m", "must be positive"));
                }
            }
        }
        if let Some(w) = &self.wiener {
            w.validate(usize::MAX, usize::MAX).at("wiener")?;
        }
        Ok(())
    }

    pub fn psis(&self) -> CliResult<Vec<f64>> {
        self.planes.psis(&self.camera, self.mask.lambda_ref_m)
    }

    pub fn wiener_config(&self) -> WienerConfig {
        self.wiener.unwrap_or_else(|| WienerConfig { nsr: self.depth_config().nsr, ..Default::default() })
    }

    pub fn depth_config(&self) -> DepthConfig {
        self.depth.unwrap_or_else(|| depth_for_sensor(&self.sensor))
    }
}

/// Depth settings for images from `sensor`. The library defaults are
/// calibrated for the default sensor; any other noise level gets the matched
/// configuration.
pub fn depth_for_sensor(sensor: &SensorConfig) -> DepthConfig {
    let level = sensor.noise_variance(0.5);
    if level == SensorConfig::default().noise_variance(0.5) {
        DepthConfig::default()
    } else {
        DepthConfig::matched(level)
    }
}

/// Seed for one stage: the first 8 bytes of SHA-256 over the run seed and
/// the stage name, so stages draw from unrelated streams.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Thread count from the flag, then `RPSF_THREADS`.
pub fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("RPSF_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::config("RPSF_THREADS", format!("expected a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}
