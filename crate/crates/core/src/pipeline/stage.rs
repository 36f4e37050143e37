use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STAGE_FILE: &str = "stage.json";

/// Written last into every finished stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub key: String,
    /// Relative path → SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
    /// Hash over `outputs`; what downstream stages key on.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub dir: PathBuf,
    pub cached: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel != STAGE_FILE {
                out.insert(rel, file_hash(&path)?);
            }
        }
    }
    Ok(())
}

/// Per-file hashes of a directory tree, `stage.json` excluded.
pub fn tree_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn combined(outputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, hash) in outputs {
        h.update(path.as_bytes());
        h.update(b"\0");
        h.update(hash.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Hash of a directory's contents, as recorded for a finished stage.
pub fn tree_hash(dir: &Path) -> Result<String> {
    Ok(combined(&tree_hashes(dir)?))
}

static SCRATCH: AtomicU64 = AtomicU64::new(0);

/// Stage directories under `<root>/stages`, built in `<root>/.staging` and
/// renamed into place once complete.
#[derive(Debug, Clone)]
pub struct StageStore {
    stages: PathBuf,
    staging: PathBuf,
}

impl StageStore {
    pub fn new(root: &Path) -> Result<Self> {
        let store = StageStore {
            stages: root.join("stages"),
            staging: root.join(".staging"),
        };
        for d in [&store.stages, &store.staging] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(store)
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.stages.join(name)
    }

    /// The stage's metadata if it finished with `key` and its files are intact.
    pub fn finished(&self, name: &str, key: &str) -> Option<StageMeta> {
        let dir = self.dir(name);
        let text = std::fs::read_to_string(dir.join(STAGE_FILE)).ok()?;
        let meta: StageMeta = serde_json::from_str(&text).ok()?;
        if meta.key != key || meta.stage != name {
            return None;
        }
        let actual = tree_hashes(&dir).ok()?;
        (actual == meta.outputs).then_some(meta)
    }

    /// Runs `build` into a scratch directory unless a finished copy with the
    /// same key exists. The key covers `name` and `inputs`.
    pub fn run<F>(&self, name: &str, inputs: &Value, build: F) -> Result<(StageMeta, StageRecord)>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let key = sha256_hex(serde_json::json!({ "stage": name, "inputs": inputs }).to_string().as_bytes());
        let dir = self.dir(name);
        let record = |cached| StageRecord {
            name: name.to_string(),
            key: key.clone(),
            dir: dir.clone(),
            cached,
        };
        if let Some(meta) = self.finished(name, &key) {
            log::info!("stage {name}: cached");
            return Ok((meta, record(true)));
        }
        log::info!("stage {name}: running");
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let scratch = self.staging.join(format!(
            "{name}.{}.{}",
            std::process::id(),
            SCRATCH.fetch_add(1, Ordering::Relaxed)
        ));
        let _ = std::fs::remove_dir_all(&scratch);
        std::fs::create_dir_all(&scratch).map_err(|e| wrap(Error::io(&scratch, e)))?;
        let built = build(&scratch).and_then(|()| {
            let outputs = tree_hashes(&scratch)?;
            let meta = StageMeta {
                stage: name.to_string(),
                key: key.clone(),
                content_hash: combined(&outputs),
                outputs,
            };
            let p = scratch.join(STAGE_FILE);
            std::fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
            Ok(meta)
        });
        let meta = match built {
            Ok(m) => m,
            Err(e) => {
                let _ = std::fs::remove_dir_all(&scratch);
                return Err(wrap(e));
            }
        };
        self.install(&scratch, &dir).map_err(wrap)?;
        if self.finished(name, &key).is_none() {
            return Err(wrap(Error::Data(format!("{} changed while being installed", dir.display()))));
        }
        Ok((meta, record(false)))
    }

    fn install(&self, scratch: &Path, dir: &Path) -> Result<()> {
        if dir.exists() {
            let trash = scratch.with_extension("old");
            if std::fs::rename(dir, &trash).is_ok() {
                let _ = std::fs::remove_dir_all(&trash);
            }
        }
        match std::fs::rename(scratch, dir) {
            Ok(()) => Ok(()),
            // Another process installed the same stage first.
            Err(_) if dir.join(STAGE_FILE).is_file() => {
                let _ = std::fs::remove_dir_all(scratch);
                Ok(())
            }
            Err(e) => Err(Error::io(dir, e)),
        }
    }
}
