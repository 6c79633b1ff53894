//! Run manifests: what was run, with which configuration, and what it wrote.
//! The layout is documented in `docs/manifest.md`.

use std::path::{Path, PathBuf};

use rpsf_core::io::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{read_file, CliError, CliResult};

pub const MANIFEST_FILE: &str = "run.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub rpsf_cli: &'static str,
    pub rpsf_core: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub stage: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub versions: Versions,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn relative(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Rewrites path strings under `base` as `base`-relative, so manifests do
/// not depend on where a run tree lives.
fn relativize(value: &mut serde_json::Value, base: &Path) {
    match value {
        serde_json::Value::String(s) => {
            if let Ok(rel) = Path::new(s.as_str()).strip_prefix(base) {
                *s = relative(rel, Path::new(""));
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|v| relativize(v, base)),
        serde_json::Value::Object(map) => map.values_mut().for_each(|v| relativize(v, base)),
        _ => {}
    }
}

impl RunManifest {
    /// Hashes `config` (compact JSON, field order as declared) and every
    /// output. Paths in `config` under `run_root` are stored relative to it.
    pub fn build(
        stage: &str,
        config: &impl Serialize,
        seed: u64,
        root: &Path,
        run_root: Option<&Path>,
        outputs: &[PathBuf],
    ) -> CliResult<Self> {
        let mut config = serde_json::to_value(config).map_err(|e| CliError::Other(format!("config serialization: {e}")))?;
        if let Some(base) = run_root {
            relativize(&mut config, base);
        }
        let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Other(e.to_string()))?;
        let mut entries = Vec::with_capacity(outputs.len());
        for p in outputs {
            let bytes = read_file(p)?;
            entries.push(OutputEntry { path: relative(p, root), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            stage: stage.to_string(),
            config_sha256: sha256_hex(&canonical),
            config,
            seed,
            versions: Versions { rpsf_cli: env!("CARGO_PKG_VERSION"), rpsf_core: rpsf_core::VERSION },
            outputs: entries,
        })
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_vec_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        text.push(b'\n');
        write_atomic(&path, &text).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
