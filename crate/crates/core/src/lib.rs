//! Rotating point spread function (RPSF) toolkit.
//!
//! Fresnel-zone spiral phase masks, scalar wave-optics PSF simulation, layered
//! coded-image formation with a realistic sensor model, classical Wiener
//! restoration, template-based depth estimation and gradient-based mask design.

pub mod conv;
pub mod depth;
pub mod error;
pub mod fft;
pub mod io;
pub mod mask;
pub mod optics;
pub mod optimize;
pub mod render;
pub mod restore;
pub mod rpsf;
pub mod sensor;
pub mod synth;

pub use error::{Error, Result};
pub use mask::{HeightMap, MaskSpec};
pub use optics::{CameraConfig, ComplexField, DefocusSpec, PupilSampling};
pub use rpsf::{PsfStack, RotationTrace};
pub use render::LayeredScene;
pub use sensor::{CfaPattern, SensorConfig};
pub use depth::{DepthConfig, DepthEstimate};
pub use restore::{Metrics, WienerConfig};
pub use optimize::{Objective, OptimizeConfig};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
