//! `dataset.json`: the index gen-phantom writes next to its scans.

use std::path::{Path, PathBuf};

use dgfilter::phantom::{Position, ScanKind};
use dgfilter::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::PhantomSection;

pub const DATASET_FILE: &str = "dataset.json";
pub const DATASET_FORMAT: &str = "dgfilter-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub format: String,
    pub seed: u64,
    pub rng: String,
    pub phantom: PhantomSection,
    pub scans: Vec<DatasetEntry>,
}

/// One scan; file names are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub scan_id: String,
    pub position: Position,
    pub scan_kind: ScanKind,
    pub manifest: String,
    pub cloud: String,
    pub frames: usize,
    pub points: usize,
    /// True bone points per class (femur, patella, tibia).
    pub bone: [usize; 3],
    pub artifacts: usize,
    pub floaters: usize,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let ds: Dataset = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            msg: format!("{}: {e}", path.display()),
        })?;
        if ds.format != DATASET_FORMAT {
            return Err(Error::Validation(format!(
                "{} has format '{}', expected '{DATASET_FORMAT}'",
                path.display(),
                ds.format
            )));
        }
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(DATASET_FILE);
        let text = serde_json::to_string_pretty(self).expect("dataset serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }

    pub fn of_kind(&self, kind: ScanKind) -> impl Iterator<Item = &DatasetEntry> {
        self.scans.iter().filter(move |s| s.scan_kind == kind)
    }

    pub fn find(&self, scan_id: &str) -> Option<&DatasetEntry> {
        self.scans.iter().find(|s| s.scan_id == scan_id)
    }
}

impl DatasetEntry {
    pub fn manifest_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.manifest)
    }

    pub fn cloud_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.cloud)
    }
}
