//! Run manifests and atomic file writing.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

/// Metadata written next to every produced artifact.
///
/// The manifest materializes all defaults, so re-running the same tool
/// version with the recorded config, inputs and seed reproduces the outputs
/// bit-exactly; only the timings vary between runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: BTreeMap<&'static str, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fully resolved configuration with every default filled in.
    pub config: Value,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            tool: "srtrack",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: None,
            config: Value::Null,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &'static str, path: &Path) {
        self.inputs.insert(key, path.display().to_string());
    }

    pub fn output(&mut self, key: &'static str, path: &Path) {
        self.outputs.insert(key, path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Writes through a sibling temp file plus rename so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let ext = match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    };
    tmp.set_extension(ext);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Wall-clock stage timer feeding `timings_ms`.
pub struct StageClock {
    last: Instant,
}

impl StageClock {
    pub fn start() -> Self {
        Self {
            last: Instant::now(),
        }
    }

    /// Records the time since the previous lap under `stage`.
    pub fn lap(&mut self, manifest: &mut RunManifest, stage: &'static str) {
        let now = Instant::now();
        let ms = now.duration_since(self.last).as_secs_f64() * 1e3;
        manifest.timings_ms.insert(stage, ms);
        self.last = now;
    }
}
