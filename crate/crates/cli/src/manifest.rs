//! Run bookkeeping: per-stage input hashes, output hashes and the
//! single-writer lock on an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gestalt_core::seed::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".gestalt.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub complete: bool,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Output path relative to the run directory → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash of a JSON-serializable description of a stage's inputs.
pub fn input_hash<T: Serialize>(inputs: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(inputs)?))
}

/// Relative paths of every regular file under `dir`, sorted.
pub fn list_files(root: &Path, dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).map_err(|_| CliError::Data(format!("{} escapes the run", p.display())))?;
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RunManifest {
    pub fn load_or_new(root: &Path, config: serde_json::Value) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let mut m = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?)?
        } else {
            RunManifest { tool_version: String::new(), config: serde_json::Value::Null, stages: BTreeMap::new() }
        };
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.config = config;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, root.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// True when `stage` last completed with `hash` and every output it
    /// recorded is still present and unchanged.
    pub fn is_fresh(&self, root: &Path, stage: &str, hash: &str) -> bool {
        let Some(r) = self.stages.get(stage) else { return false };
        r.complete
            && r.input_hash == hash
            && r.outputs.iter().all(|(rel, h)| file_hash(&root.join(rel)).map(|x| &x == h).unwrap_or(false))
    }

    /// Marks `stage` as running and incomplete.
    pub fn begin(&mut self, root: &Path, stage: &str, hash: &str) -> Result<()> {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                input_hash: hash.to_string(),
                complete: false,
                started_unix: now(),
                finished_unix: None,
                outputs: BTreeMap::new(),
            },
        );
        self.save(root)
    }

    pub fn finish(&mut self, root: &Path, stage: &str, outputs: &[String]) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for rel in outputs {
            hashes.insert(rel.clone(), file_hash(&root.join(rel))?);
        }
        let r = self.stages.get_mut(stage).expect("stage was begun");
        r.outputs = hashes;
        r.complete = true;
        r.finished_unix = Some(now());
        self.save(root)
    }

    /// Combined digest of a completed stage's outputs, used as an input to
    /// downstream stages.
    pub fn output_digest(&self, stage: &str) -> Result<String> {
        match self.stages.get(stage) {
            Some(r) if r.complete => input_hash(&r.outputs),
            _ => Err(CliError::Data(format!("stage `{stage}` has not completed; run it first"))),
        }
    }
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Data(format!(
                "{} is locked by another run (delete {} if that run is gone)",
                root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freshness_tracks_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut m = RunManifest::load_or_new(root, serde_json::json!({})).unwrap();
        fs::write(root.join("a.csv"), "x\n1\n").unwrap();
        m.begin(root, "s", "h1").unwrap();
        assert!(!m.is_fresh(root, "s", "h1"));
        m.finish(root, "s", &["a.csv".into()]).unwrap();
        assert!(m.is_fresh(root, "s", "h1"));
        assert!(!m.is_fresh(root, "s", "h2"));
        let reloaded = RunManifest::load_or_new(root, serde_json::json!({})).unwrap();
        assert!(reloaded.is_fresh(root, "s", "h1"));
        fs::write(root.join("a.csv"), "x\n2\n").unwrap();
        assert!(!m.is_fresh(root, "s", "h1"));
        assert!(m.output_digest("missing").is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
