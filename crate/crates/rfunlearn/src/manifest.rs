//! Dataset manifest: where every IQ recording lives, what it is, and the
//! digests of the caches derived from it. Stored as pretty-printed JSON with
//! a fixed key order.

use std::collections::BTreeMap;
use std::path::Path;

use rfunlearn_core::digest::Digest;
use serde::{Deserialize, Serialize};

use crate::bin_io::parse_digest;
use crate::error::{Error, Result};
use crate::formats::{read_bytes, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub device_id: u16,
    pub seed: u64,
    pub sample_rate_hz: f64,
    /// Hex SHA-256 of the file's bytes.
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_id: String,
    pub split: SplitSpec,
    pub entries: Vec<ManifestEntry>,
    /// Cache name to hex digest of the cache file.
    pub caches: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(dataset_id: impl Into<String>, split: SplitSpec) -> Self {
        Self { dataset_id: dataset_id.into(), split, entries: Vec::new(), caches: BTreeMap::new() }
    }

    pub fn entry(&self, file: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.file == file)
    }

    /// Appends `entry`. Re-adding an identical entry is a no-op; changing an
    /// existing one is refused.
    pub fn push_entry(&mut self, entry: ManifestEntry) -> Result<()> {
        match self.entry(&entry.file) {
            Some(old) if *old == entry => Ok(()),
            Some(_) => Err(Error::Metadata(format!("manifest already has a different entry for {}", entry.file))),
            None => {
                self.entries.push(entry);
                Ok(())
            }
        }
    }

    pub fn record_cache(&mut self, name: &str, digest: &Digest) -> Result<()> {
        let hex = digest.to_string();
        match self.caches.get(name) {
            Some(old) if *old == hex => Ok(()),
            Some(old) => Err(Error::Metadata(format!("cache {name} was recorded as {old}, now {hex}"))),
            None => {
                self.caches.insert(name.into(), hex);
                Ok(())
            }
        }
    }

    pub fn cache_digest(&self, name: &str) -> Result<Option<Digest>> {
        self.caches.get(name).map(|h| parse_digest(h)).transpose()
    }

    /// Checks that every recording exists under `root` with its recorded digest.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            let path = root.join(&e.file);
            if !path.exists() {
                return Err(Error::Metadata(format!("{} is listed but missing", e.file)));
            }
            let actual = Digest::of(&read_bytes(&path)?);
            if actual != parse_digest(&e.digest)? {
                return Err(Error::Metadata(format!("{} does not match its recorded digest", e.file)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Metadata(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Metadata("manifest is not UTF-8".into()))?;
        Self::from_json(&text)
    }
}
