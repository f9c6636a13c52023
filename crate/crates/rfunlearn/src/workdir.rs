//! Layout of an experiment directory and its writer lock.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::formats::{read_bytes, write_atomic};

const INDEX: &str = "index.json";
const LOCK: &str = ".lock";

/// Formats a label set as `3` or `3+5`.
pub fn labels_key(labels: &BTreeSet<u16>) -> String {
    labels.iter().map(u16::to_string).collect::<Vec<_>>().join("+")
}

/// Parses `3`, `3,5` or `3+5`.
pub fn parse_labels(text: &str) -> Result<BTreeSet<u16>> {
    let set: BTreeSet<u16> = text
        .split([',', '+'])
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("bad device id {t:?}"))))
        .collect::<Result<_>>()?;
    if set.is_empty() {
        return Err(Error::Config("no device ids given".into()));
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    /// Opens `root`, creating it when missing.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).at(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Role name to relative artifact path, e.g. `model` or `ffv/3`.
    pub fn index(&self) -> Result<BTreeMap<String, String>> {
        let path = self.path(INDEX);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        Ok(serde_json::from_slice(&read_bytes(&path)?)?)
    }

    pub fn set_role(&self, role: &str, rel: &str) -> Result<()> {
        let mut index = self.index()?;
        index.insert(role.into(), rel.into());
        let mut text = serde_json::to_string_pretty(&index)?;
        text.push('\n');
        write_atomic(&self.path(INDEX), text.as_bytes())
    }

    pub fn role(&self, role: &str) -> Result<Option<PathBuf>> {
        Ok(self.index()?.get(role).map(|rel| self.path(rel)))
    }

    pub fn require(&self, role: &str, hint: &str) -> Result<PathBuf> {
        match self.role(role)? {
            Some(p) if p.exists() => Ok(p),
            _ => Err(Error::Missing(format!("{role} ({hint})"))),
        }
    }

    pub fn lock(&self) -> Result<WorkdirLock> {
        WorkdirLock::acquire(&self.root)
    }
}

/// Exclusive writer lock, released on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e).at(&path),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
