//! Artifact locations, the run manifest and the workdir lock.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PASSAGES: &str = "passages.jsonl";
pub const TRAIN: &str = "conversations_train.jsonl";
pub const TEST: &str = "conversations_test.jsonl";
pub const SPARSE_INDEX: &str = "index/sparse.json";
pub const DENSE_INDEX: &str = "index/dense.bin";
pub const EMBEDDER: &str = "index/embedder.json";
pub const INDEX_MANIFEST: &str = "index/manifest.json";
pub const PROMPTS: &str = "prompts.jsonl";
pub const LABELS: &str = "labels.jsonl";
pub const RESPONSES: &str = "responses.jsonl";
pub const FAILURES: &str = "annotation_failures.jsonl";
pub const LABEL_CACHE: &str = "label_cache.jsonl";
pub const CHECKPOINT_S1: &str = "checkpoint_s1.ckpt";
pub const CHECKPOINT_S2: &str = "checkpoint_s2.ckpt";
pub const STAGE1_REPORT: &str = "stage1_report.csv";
pub const STAGE2_REPORT: &str = "stage2_report.csv";
pub const EPOCH_DIR: &str = "checkpoints";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const RANKED: &str = "ranked.jsonl";
pub const REFORMULATIONS: &str = "reformulations.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const ALIGNMENT: &str = "alignment.csv";
pub const RUN_MANIFEST: &str = "manifest.jsonl";
const LOCK: &str = ".lock";

/// Lowercase hex sha256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub artifact: String,
    pub sha256: String,
    pub bytes: u64,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// An open workdir. Holding one holds the lock file; dropping it releases.
#[derive(Debug)]
pub struct Workdir {
    root: PathBuf,
    lock: PathBuf,
}

impl Workdir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("index"))?;
        fs::create_dir_all(root.join(EPOCH_DIR))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(lock)),
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// The artifact's path, or a dependency error naming its producer.
    pub fn require(&self, name: &str, producer: &'static str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingDependency {
                artifact: name.to_string(),
                producer,
            })
        }
    }

    pub fn epoch_checkpoint(&self, prefix: &str, epoch: usize) -> PathBuf {
        self.path(EPOCH_DIR).join(format!("{prefix}_epoch{epoch}.ckpt"))
    }

    /// Existing `<prefix>_epoch<k>` checkpoints for k = 1, 2, … up to the first gap.
    pub fn epoch_checkpoints(&self, prefix: &str) -> Vec<PathBuf> {
        (1..)
            .map(|k| self.epoch_checkpoint(prefix, k))
            .take_while(|p| p.exists())
            .collect()
    }

    /// Hashes a written artifact and appends it to the run manifest.
    pub fn record(&self, stage: &str, name: &str, seed: u64) -> Result<ManifestEntry> {
        let path = self.path(name);
        let entry = ManifestEntry {
            stage: stage.to_string(),
            artifact: name.to_string(),
            sha256: file_hash(&path)?,
            bytes: fs::metadata(&path)?.len(),
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(RUN_MANIFEST))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        log::info!("{stage}: wrote {name} ({})", &entry.sha256[..12]);
        Ok(entry)
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.path(RUN_MANIFEST);
        if !path.exists() {
            return Ok(Vec::new());
        }
        crate::corpus::read_jsonl(&path)
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::open(dir.path()).unwrap();
        assert!(matches!(Workdir::open(dir.path()), Err(Error::Locked(_))));
        drop(w);
        Workdir::open(dir.path()).unwrap();
    }

    #[test]
    fn manifest_records_content_hash() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::open(dir.path()).unwrap();
        fs::write(w.path("a.txt"), "abc").unwrap();
        let e = w.record("test", "a.txt", 3).unwrap();
        assert_eq!(e.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(e.bytes, 3);
        assert_eq!(w.manifest().unwrap(), vec![e]);
    }

    #[test]
    fn missing_dependency_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::open(dir.path()).unwrap();
        let err = w.require(RANKED, "rank").unwrap_err();
        assert_eq!(err.to_string(), "missing dependency `ranked.jsonl`; run `rank` first");
    }
}
