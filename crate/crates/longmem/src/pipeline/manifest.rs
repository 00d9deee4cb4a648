//! Run manifest: content hashes of every stage's inputs and outputs.
//!
//! A stage is skipped when its recorded config hash, input hashes and
//! output hashes all match the current state; any mismatch (edited
//! config, changed input, corrupted output) re-runs it.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Path (relative to the run directory when possible) → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_snapshot: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_snapshot: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_snapshot,
            stages: BTreeMap::new(),
        }
    }

    pub fn load_or_new(path: &Path, config_snapshot: String) -> Self {
        match std::fs::read_to_string(path) {
            Ok(text) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(mut m) => {
                    m.config_snapshot = config_snapshot;
                    m
                }
                Err(_) => RunManifest::new(config_snapshot),
            },
            Err(_) => RunManifest::new(config_snapshot),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// True when the recorded stage state matches the filesystem.
    pub fn stage_is_current(&self, stage: &str, config_hash: &str, base: &Path) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        if record.config_hash != config_hash {
            return false;
        }
        for (rel, hash) in record.inputs.iter().chain(record.outputs.iter()) {
            match hash_file(&base.join(rel)) {
                Ok(current) if &current == hash => {}
                _ => return false,
            }
        }
        true
    }

    pub fn record_stage(
        &mut self,
        stage: &str,
        config_hash: String,
        base: &Path,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let to_map = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            let mut map = BTreeMap::new();
            for p in paths {
                let rel = p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
                map.insert(rel, hash_file(p)?);
            }
            Ok(map)
        };
        let record = StageRecord {
            config_hash,
            inputs: to_map(inputs)?,
            outputs: to_map(outputs)?,
            finished_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.stages.insert(stage.to_string(), record);
        Ok(())
    }
}

/// Streaming SHA-256 of a file.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// SHA-256 of an in-memory string (stage config sections).
pub fn hash_str(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// All regular files below a directory, sorted for deterministic hashing.
pub fn files_below(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn stage_currency_tracks_hashes() {
        let dir = tempdir().unwrap();
        let base = dir.path();
        let input = base.join("in.txt");
        let output = base.join("out.txt");
        std::fs::write(&input, "data").unwrap();
        std::fs::write(&output, "result").unwrap();

        let mut m = RunManifest::new("cfg".into());
        m.record_stage("stage1", "h1".into(), base, &[input.clone()], &[output.clone()])
            .unwrap();
        assert!(m.stage_is_current("stage1", "h1", base));
        assert!(!m.stage_is_current("stage1", "h2", base));
        assert!(!m.stage_is_current("other", "h1", base));

        // Corrupt the output: stage must re-run.
        std::fs::write(&output, "corrupted").unwrap();
        assert!(!m.stage_is_current("stage1", "h1", base));

        // Restore; changed input also forces a re-run.
        std::fs::write(&output, "result").unwrap();
        assert!(m.stage_is_current("stage1", "h1", base));
        std::fs::write(&input, "new data").unwrap();
        assert!(!m.stage_is_current("stage1", "h1", base));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m = RunManifest::new("snapshot".into());
        let f = dir.path().join("x");
        std::fs::write(&f, "x").unwrap();
        m.record_stage("s", "h".into(), dir.path(), &[f.clone()], &[f.clone()]).unwrap();
        m.save(&path).unwrap();
        let loaded = RunManifest::load_or_new(&path, "snapshot".into());
        assert!(loaded.stages.contains_key("s"));
    }
}
