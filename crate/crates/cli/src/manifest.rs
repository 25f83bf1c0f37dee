//! Run manifests: what was run, with which inputs, written before any work.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ConfigError;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Object hash in the style of git blobs: `sha256("blob <len>\0" ++ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Hash over named blobs, like a tree: one `<blob-hash> <name>\n` line per
/// input in the given order.
pub fn tree_hash(entries: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (name, blob) in entries {
        h.update(format!("{blob} {name}\n").as_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: String,
    pub seed: u64,
    /// `(name, blob hash)` per input; the config snapshot comes first.
    pub inputs: Vec<(String, String)>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn new(command: &str, config_snapshot: String, seed: u64, output_dir: &Path) -> Self {
        let inputs = vec![("config".to_string(), blob_hash(config_snapshot.as_bytes()))];
        RunManifest {
            command: command.to_string(),
            config_snapshot,
            seed,
            inputs,
            output_dir: output_dir.to_path_buf(),
        }
    }

    /// Adds a file input by content.
    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes =
            fs::read(path).map_err(|e| ConfigError::one(format!("cannot read input {}: {e}", path.display())))?;
        self.inputs.push((path.display().to_string(), blob_hash(&bytes)));
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        tree_hash(&self.inputs)
    }

    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        t.insert("command".into(), self.command.clone().into());
        t.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        t.insert("content_hash".into(), self.content_hash().into());
        t.insert("output_dir".into(), self.output_dir.display().to_string().into());
        let mut inputs = toml::Table::new();
        for (name, hash) in &self.inputs {
            inputs.insert(name.clone(), hash.clone().into());
        }
        t.insert("inputs".into(), inputs.into());
        t.insert("config".into(), self.config_snapshot.clone().into());
        t.to_string()
    }

    /// Creates the output directory and writes the manifest and config snapshot.
    pub fn write(&self) -> anyhow::Result<()> {
        prepare_dir(&self.output_dir)?;
        fs::write(self.output_dir.join(MANIFEST_FILE), self.to_toml())?;
        fs::write(self.output_dir.join(CONFIG_SNAPSHOT), &self.config_snapshot)?;
        Ok(())
    }
}

/// An output directory that cannot be created is a configuration error.
pub fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| ConfigError::one(format!("output directory {} is not writable: {e}", dir.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_is_content_addressed() {
        assert_eq!(blob_hash(b"abc"), blob_hash(b"abc"));
        assert_ne!(blob_hash(b"abc"), blob_hash(b"abd"));
        assert_eq!(blob_hash(b"").len(), 64);
    }

    #[test]
    fn manifest_toml_parses_back() {
        let m = RunManifest::new("train", "seed = 1\n".into(), 1, Path::new("out"));
        let t: toml::Table = m.to_toml().parse().unwrap();
        assert_eq!(t["command"].as_str(), Some("train"));
        assert_eq!(t["config"].as_str(), Some("seed = 1\n"));
        assert_eq!(t["content_hash"].as_str().unwrap(), m.content_hash());
    }
}
