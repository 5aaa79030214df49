use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STORE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Hashes of the upstream stages this run consumed.
    pub upstream: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            format: STORE_FORMAT,
            stages: BTreeMap::new(),
        }
    }
}

/// JSON artifact tagged with the hash of the stage that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub data: T,
}

/// Directory of stage artifacts with a manifest of completed stages.
#[derive(Debug, Clone)]
pub struct ModelStore {
    root: PathBuf,
}

impl ModelStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ModelStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.root.join(relative)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.path("manifest.json");
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let manifest: Manifest = read_json(&path)?;
        if manifest.format != STORE_FORMAT {
            return Err(Error::format("manifest", format!("unsupported store format {}", manifest.format)));
        }
        Ok(manifest)
    }

    pub fn record(&self, stage: &str, record: StageRecord) -> Result<()> {
        let mut manifest = self.manifest()?;
        manifest.stages.insert(stage.to_string(), record);
        write_json(&self.path("manifest.json"), &manifest)
    }

    /// Removes and recreates a stage output directory.
    pub fn fresh_dir(&self, relative: &str) -> Result<PathBuf> {
        let dir = self.path(relative);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn write_artifact<T: Serialize>(&self, relative: impl AsRef<Path>, config_hash: &str, data: &T) -> Result<()> {
        write_json(
            &self.path(relative),
            &Artifact {
                config_hash: config_hash.to_string(),
                data,
            },
        )
    }

    pub fn read_artifact<T: DeserializeOwned>(&self, relative: impl AsRef<Path>) -> Result<T> {
        let path = self.path(relative);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let artifact: Artifact<T> = read_json(&path)?;
        Ok(artifact.data)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content digest of a file, or of nothing when the path is unset.
pub fn file_digest(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if !p.as_os_str().is_empty() => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(sha256_hex(&bytes))
        }
        _ => Ok(String::new()),
    }
}

/// 64-bit seed derived from a base seed and a name.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// File-name-safe form of an identifier.
pub fn slug(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
