//! Artifact writing with provenance.
//!
//! JSON objects carry a `provenance` field directly. Files whose layout is
//! fixed (CSV, JSON arrays, JSON lines, plain text) are listed in
//! `manifest.json` next to them with their SHA-256, config hash and tool
//! version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "ipaths";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config_hash.into(),
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory plus the provenance stamped on everything written to it.
#[derive(Debug, Clone)]
pub struct ArtifactDir {
    root: PathBuf,
    provenance: Provenance,
}

impl ArtifactDir {
    pub fn create(root: impl Into<PathBuf>, provenance: Provenance) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root, provenance })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_raw(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes a fixed-layout file and records it in the manifest.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.write_raw(name, bytes)?;
        let mut manifest = self.manifest()?;
        manifest.insert(
            name.to_string(),
            ManifestEntry {
                sha256: sha256_hex(bytes),
                provenance: self.provenance.clone(),
            },
        );
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        self.write_raw(MANIFEST, text.as_bytes())?;
        Ok(path)
    }

    /// Writes a JSON object with an embedded `provenance` field.
    pub fn write_json_object(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        let obj = v.as_object_mut().context("artifact is not a JSON object")?;
        obj.insert("provenance".into(), self.provenance.to_value());
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write_raw(name, text.as_bytes())
    }

    pub fn manifest(&self) -> Result<BTreeMap<String, ManifestEntry>> {
        let path = self.path(MANIFEST);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Renders serializable rows as RFC 4180 CSV.
pub fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        #[serde(rename = "Task")]
        task: &'static str,
        value: f64,
    }

    #[test]
    fn manifest_tracks_every_fixed_layout_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ArtifactDir::create(tmp.path(), Provenance::new("abc")).unwrap();
        let bytes = csv_bytes([Row {
            task: "a,b",
            value: 0.1,
        }])
        .unwrap();
        assert_eq!(String::from_utf8(bytes.clone()).unwrap(), "Task,value\n\"a,b\",0.1\n");
        dir.write("t.csv", &bytes).unwrap();
        dir.write("sub/u.txt", b"x").unwrap();
        let m = dir.manifest().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["t.csv"].sha256, sha256_hex(&bytes));
        assert_eq!(m["sub/u.txt"].provenance.config_hash, "abc");
    }

    #[test]
    fn json_objects_embed_provenance() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ArtifactDir::create(tmp.path(), Provenance::new("h")).unwrap();
        let p = dir.write_json_object("a.json", &serde_json::json!({"x": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["provenance"]["config_hash"], "h");
        assert_eq!(v["provenance"]["version"], VERSION);
        assert!(dir.write_json_object("b.json", &[1, 2]).is_err());
    }
}
