//! Dataset manifest: JSON index of scene records on disk.
//!
//! The manifest file is a top-level JSON array of scene records; paths are
//! resolved relative to the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::io::{read_image_png, read_mask_png};
use super::types::{HazardType, RasterImage, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub event_id: String,
    pub hazard_type: HazardType,
    pub split: Split,
    pub pre_path: PathBuf,
    pub post_path: PathBuf,
    pub mask_path: PathBuf,
    pub gsd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<SceneRecord>,
    /// Directory paths are resolved against; set on load, not serialized.
    pub base_dir: PathBuf,
}

/// A scene's pixel data pulled off disk: imagery plus the truth grade map.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub record: SceneRecord,
    pub pre: RasterImage,
    pub post: RasterImage,
    pub truth: Array2<u8>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SceneRecord>, base_dir: PathBuf) -> DatasetManifest {
        DatasetManifest { records, base_dir }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn event_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.event_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn filter_by_event(&self, event_ids: &[String]) -> DatasetManifest {
        let records = self
            .records
            .iter()
            .filter(|r| event_ids.contains(&r.event_id))
            .cloned()
            .collect();
        DatasetManifest::new(records, self.base_dir.clone())
    }

    pub fn exclude_events(&self, event_ids: &[String]) -> DatasetManifest {
        let records = self
            .records
            .iter()
            .filter(|r| !event_ids.contains(&r.event_id))
            .cloned()
            .collect();
        DatasetManifest::new(records, self.base_dir.clone())
    }

    pub fn filter_by_split(&self, split: Split) -> DatasetManifest {
        let records = self.records.iter().filter(|r| r.split == split).cloned().collect();
        DatasetManifest::new(records, self.base_dir.clone())
    }

    pub fn filter_by_hazard(&self, hazard: HazardType) -> DatasetManifest {
        let records = self.records.iter().filter(|r| r.hazard_type == hazard).cloned().collect();
        DatasetManifest::new(records, self.base_dir.clone())
    }

    pub fn load_scene(&self, record: &SceneRecord) -> Result<LoadedScene> {
        Ok(LoadedScene {
            record: record.clone(),
            pre: read_image_png(&self.resolve(&record.pre_path), record.gsd)?,
            post: read_image_png(&self.resolve(&record.post_path), record.gsd)?,
            truth: read_mask_png(&self.resolve(&record.mask_path))?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LoadedScene>> {
        self.records.iter().map(|r| self.load_scene(r)).collect()
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&manifest.records)?;
    fs::write(path, json).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Load and validate a manifest. Every referenced path must resolve to an
/// existing file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::ManifestNotFound(path.to_path_buf()));
    }
    let raw = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let records: Vec<SceneRecord> =
        serde_json::from_str(&raw).map_err(|e| Error::ManifestSchema(e.to_string()))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let manifest = DatasetManifest::new(records, base_dir);
    for record in &manifest.records {
        for p in [&record.pre_path, &record.post_path, &record.mask_path] {
            let resolved = manifest.resolve(p);
            if !resolved.exists() {
                return Err(Error::DanglingPath(resolved));
            }
        }
        if record.gsd <= 0.0 {
            return Err(Error::ManifestSchema(format!(
                "gsd must be > 0 for event {}",
                record.event_id
            )));
        }
    }
    Ok(manifest)
}
