//! Run store: `runs/<run_id>/{manifest.json, trajectories.jsonl, datasets/, reports/}`.
//!
//! The run id is a content hash of the config snapshot and seed. A run
//! directory is never reused; a colliding id gets a numeric suffix. The
//! manifest is written once, when the run finishes, and lists every file in
//! the run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::util::sha256_hex;

pub const MANIFEST: &str = "manifest.json";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const DATASETS: &str = "datasets";
pub const REPORTS: &str = "reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_snapshot: serde_json::Value,
    pub seed: u64,
    pub created_at: String,
    /// Paths relative to the run directory, sorted.
    pub artifact_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

/// Content hash of the config snapshot and seed. Key order in the snapshot
/// is fixed by the config types, so the id survives re-serialization.
pub fn run_id(config: &Config, seed: u64) -> String {
    let snapshot = serde_json::to_string(config).expect("config serializes");
    sha256_hex(format!("{snapshot}\nseed={seed}").as_bytes())[..16].to_string()
}

#[derive(Debug)]
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
    command: String,
    snapshot: serde_json::Value,
    seed: u64,
    created_at: String,
}

impl RunDir {
    /// Creates a fresh run directory under `root`.
    pub fn create(root: &Path, command: &str, config: &Config, seed: u64) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        let base = run_id(config, seed);
        let mut id = base.clone();
        let mut n = 1;
        let path = loop {
            let candidate = root.join(&id);
            match std::fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    id = format!("{base}-{n}");
                    n += 1;
                }
                Err(e) => return Err(e),
            }
        };
        std::fs::create_dir(path.join(DATASETS))?;
        std::fs::create_dir(path.join(REPORTS))?;
        Ok(Self {
            run_id: id,
            path,
            command: command.to_string(),
            snapshot: serde_json::to_value(config).expect("config serializes"),
            seed,
            created_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn trajectories(&self) -> PathBuf {
        self.path.join(TRAJECTORIES)
    }

    pub fn datasets(&self) -> PathBuf {
        self.path.join(DATASETS)
    }

    pub fn reports(&self) -> PathBuf {
        self.path.join(REPORTS)
    }

    /// Writes the manifest, listing every file currently in the run
    /// directory.
    pub fn finish(self, summary: serde_json::Value) -> std::io::Result<RunManifest> {
        let mut artifacts = Vec::new();
        collect_files(&self.path, &self.path, &mut artifacts)?;
        artifacts.sort();
        let manifest = RunManifest {
            run_id: self.run_id,
            command: self.command,
            config_snapshot: self.snapshot,
            seed: self.seed,
            created_at: self.created_at,
            artifact_paths: artifacts,
            summary,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.path.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            let rel = path.strip_prefix(root).expect("inside run dir");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> std::io::Result<RunManifest> {
    let text = std::fs::read_to_string(run_dir.join(MANIFEST))?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_is_stable_and_seed_sensitive() {
        let cfg = Config::default();
        let again = Config::from_json(&cfg.to_json()).unwrap();
        assert_eq!(run_id(&cfg, 1), run_id(&again, 1));
        assert_ne!(run_id(&cfg, 1), run_id(&cfg, 2));
    }

    #[test]
    fn collision_gets_suffix_and_manifest_lists_files() {
        let root = tempfile::tempdir().unwrap();
        let cfg = Config::default();
        let a = RunDir::create(root.path(), "eval", &cfg, 7).unwrap();
        let b = RunDir::create(root.path(), "eval", &cfg, 7).unwrap();
        assert_eq!(b.run_id, format!("{}-1", a.run_id));

        std::fs::write(a.trajectories(), "").unwrap();
        std::fs::write(a.reports().join("eval.txt"), "x").unwrap();
        let path = a.path.clone();
        let m = a.finish(serde_json::json!({"pass_rate": 0.5})).unwrap();
        assert_eq!(m.artifact_paths, vec!["reports/eval.txt", "trajectories.jsonl"]);
        assert_eq!(read_manifest(&path).unwrap(), m);
    }
}
