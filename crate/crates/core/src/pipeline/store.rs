use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::fields_digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub name: String,
    pub key: String,
    /// Relative to the output directory.
    pub path: PathBuf,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub tool_version: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub status: String,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<PathBuf>,
    pub warnings: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn reused_stages(&self) -> usize {
        self.stages.iter().filter(|s| s.reused).count()
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Content-addressed stage outputs under `<output_dir>/stages/`.
pub(crate) struct StageStore {
    root: PathBuf,
    pub records: Vec<StageRecord>,
    pub artifacts: Vec<PathBuf>,
}

impl StageStore {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            records: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_path(stage: &str, name: &str, key: &str) -> PathBuf {
        Path::new("stages").join(stage).join(format!("{name}-{}.json", &key[..16]))
    }

    pub fn exists(&self, stage: &str, name: &str, key: &str) -> bool {
        self.root.join(Self::stage_path(stage, name, key)).exists()
    }

    /// Loads the stage output when its key was seen before, otherwise
    /// computes and persists it.
    pub fn cached<T, F>(&mut self, stage: &str, name: &str, key: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let rel = Self::stage_path(stage, name, key);
        let path = self.root.join(&rel);
        let loaded = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            match serde_json::from_str(&text) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("discarding unreadable stage output {}: {e}", path.display());
                    None
                }
            }
        } else {
            None
        };
        let reused = loaded.is_some();
        let value = match loaded {
            Some(v) => v,
            None => {
                let v = compute()?;
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let tmp = path.with_extension("json.tmp");
                std::fs::write(&tmp, serde_json::to_string(&v)?).map_err(|e| Error::io(&tmp, e))?;
                std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
                v
            }
        };
        log::info!("stage {stage}/{name}: {}", if reused { "reused" } else { "computed" });
        self.records.push(StageRecord {
            stage: stage.into(),
            name: name.into(),
            key: key.into(),
            path: rel,
            reused,
        });
        Ok(value)
    }

    pub fn write_artifact(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(PathBuf::from(name));
        Ok(path)
    }
}

pub fn key(parts: &[&str]) -> String {
    fields_digest(parts)
}
