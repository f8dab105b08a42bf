//! Atomic artifact writing and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Artifact;
use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct OutputEntry<'a> {
    name: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    config: serde_json::Value,
    config_sha256: String,
    seed: u64,
    workers: usize,
    wall_time_s: f64,
    versions: Versions,
    outputs: Vec<OutputEntry<'a>>,
}

#[derive(Serialize)]
struct Versions {
    radflow: &'static str,
    manifest_format: u32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &target));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map(|_| target)
}

/// Writes every artifact and then the manifest. On failure, files written by
/// this call are removed again.
pub fn persist(dir: &Path, cfg: &RunConfig, workers: usize, wall: f64, artifacts: &[Artifact]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let config_json = cfg.to_json();
    let manifest = Manifest {
        command: cfg.command().as_str(),
        config: serde_json::from_str(&config_json).map_err(io::Error::other)?,
        config_sha256: sha256_hex(config_json.as_bytes()),
        seed: cfg.seed,
        workers,
        wall_time_s: wall,
        versions: Versions { radflow: env!("CARGO_PKG_VERSION"), manifest_format: 1 },
        outputs: artifacts
            .iter()
            .map(|a| OutputEntry { name: &a.name, bytes: a.bytes.len(), sha256: sha256_hex(&a.bytes) })
            .collect(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
    manifest_bytes.push(b'\n');
    let mut written = Vec::new();
    let all = artifacts.iter().map(|a| (a.name.as_str(), a.bytes.as_slice())).chain([(MANIFEST, manifest_bytes.as_slice())]);
    for (name, bytes) in all {
        match write_atomic(dir, name, bytes) {
            Ok(p) => written.push(p),
            Err(e) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
        }
    }
    Ok(written)
}
