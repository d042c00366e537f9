use std::fs;
use std::path::{Path, PathBuf};

use super::{EntityKey, EntityRecord, FeatureManifest};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "features_manifest.json";

/// A loaded entity directory.
#[derive(Clone, Debug)]
pub struct EntityStore {
    pub records: Vec<EntityRecord>,
    pub manifest: Option<FeatureManifest>,
}

impl EntityStore {
    pub fn get(&self, key: &EntityKey) -> Option<&EntityRecord> {
        self.records.iter().find(|r| &r.key == key)
    }
}

pub fn entity_path(dir: &Path, key: &EntityKey) -> PathBuf {
    dir.join(format!("{key}.json"))
}

/// Writes one `<fips>.json` per record plus the features manifest.
pub fn save_store(dir: &Path, records: &[EntityRecord], manifest: &FeatureManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        let path = entity_path(dir, &r.key);
        fs::write(&path, serde_json::to_string_pretty(r)?).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads every `<fips>.json` in `dir`, sorted by key.
pub fn load_store(dir: &Path) -> Result<EntityStore> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("entity directory {} does not exist", dir.display())));
    }
    let mut records = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().and_then(|s| s.to_str()) != Some("json")
            || stem.len() != 5
            || !stem.bytes().all(|b| b.is_ascii_digit())
        {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        records.push(serde_json::from_str::<EntityRecord>(&text)?);
    }
    records.sort_by(|a, b| a.key.cmp(&b.key));
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok(EntityStore { records, manifest })
}
