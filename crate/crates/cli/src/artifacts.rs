//! Artifact directory: content-hashed files, a manifest and a lock file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Lists every artifact with its hash. Contains no timestamps, so identical
/// runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    /// Hash of the manifest file contents.
    pub fn digest(&self) -> String {
        sha256_hex(&manifest_bytes(self))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_bytes(m: &Manifest) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

/// An artifact directory owned by this process until dropped.
pub struct ArtifactDir {
    root: PathBuf,
    config_sha256: String,
    seed: u64,
    stages: Vec<StageRecord>,
    entries: BTreeMap<String, ArtifactEntry>,
}

impl ArtifactDir {
    pub fn open(root: &Path, config_sha256: String, seed: u64) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        OpenOptions::new().write(true).create_new(true).open(root.join(LOCK)).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                io::Error::new(e.kind(), format!("{} is locked by another run", root.display()))
            } else {
                e
            }
        })?;
        Ok(Self { root: root.to_path_buf(), config_sha256, seed, stages: Vec::new(), entries: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` inside the directory, through a temporary
    /// file and a rename.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        let target = self.resolve(rel)?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = target.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &target)?;
        self.entries.insert(
            rel.to_string(),
            ArtifactEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> io::Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn record_stage(&mut self, name: &str, status: &str, message: Option<String>) -> io::Result<()> {
        self.stages.push(StageRecord { name: name.into(), status: status.into(), message });
        self.write_manifest()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: 1,
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            stages: self.stages.clone(),
            artifacts: self.entries.values().cloned().collect(),
        }
    }

    pub fn write_manifest(&self) -> io::Result<()> {
        let target = self.root.join(MANIFEST);
        let tmp = target.with_extension("partial");
        fs::write(&tmp, manifest_bytes(&self.manifest()))?;
        fs::rename(tmp, target)
    }

    fn resolve(&self, rel: &str) -> io::Result<PathBuf> {
        let p = Path::new(rel);
        let inside = p.components().all(|c| matches!(c, Component::Normal(_)));
        if !inside || rel == MANIFEST || rel == LOCK {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("artifact path {rel} is not allowed")));
        }
        Ok(self.root.join(p))
    }
}

impl Drop for ArtifactDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

/// Checks every manifest entry against the files on disk.
pub fn verify_manifest(root: &Path) -> io::Result<Vec<String>> {
    let text = fs::read_to_string(root.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(io::Error::other)?;
    let mut problems = Vec::new();
    for e in &m.artifacts {
        match fs::read(root.join(&e.path)) {
            Ok(bytes) if sha256_hex(&bytes) == e.sha256 => {}
            Ok(_) => problems.push(format!("{}: hash mismatch", e.path)),
            Err(err) => problems.push(format!("{}: {err}", e.path)),
        }
    }
    Ok(problems)
}

/// CSV with a header row and 17 significant digits per value.
pub fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_hashes_and_lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("out");
        let mut dir = ArtifactDir::open(&root, "abc".into(), 4).unwrap();
        assert!(ArtifactDir::open(&root, "abc".into(), 4).is_err());
        dir.write("b/data.csv", b"x\n1\n").unwrap();
        dir.write_json("a.json", &[1.0, 2.0]).unwrap();
        assert!(dir.write("../escape", b"no").is_err());
        assert!(dir.write(MANIFEST, b"no").is_err());
        dir.record_stage("simulate", "ok", None).unwrap();
        let m = dir.manifest();
        assert_eq!(m.artifacts.iter().map(|e| e.path.as_str()).collect::<Vec<_>>(), ["a.json", "b/data.csv"]);
        assert_eq!(m.artifacts[1].sha256, sha256_hex(b"x\n1\n"));
        drop(dir);
        assert!(!root.join(LOCK).exists());
        assert!(verify_manifest(&root).unwrap().is_empty());
        fs::write(root.join("a.json"), "tampered").unwrap();
        assert_eq!(verify_manifest(&root).unwrap().len(), 1);
    }

    #[test]
    fn csv_round_trips_exactly() {
        let v = [0.1f64, 1.0 / 3.0, -2.5e-300, 6.02214076e23];
        let csv = csv_table(&["a".into(), "b".into(), "c".into(), "d".into()], [v.to_vec()]);
        let row = csv.lines().nth(1).unwrap();
        let back: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(back, v);
    }
}
