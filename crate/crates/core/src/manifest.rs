//! Run manifests: what a command was asked to do, with which inputs, and where it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LoatError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| LoatError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Arguments after the program name; replaying re-runs exactly these.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path to sha256 of its bytes at run time.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch; the only non-reproducible field.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(args: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args,
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Hash of everything but the timestamp.
    pub fn fingerprint(&self) -> String {
        let mut m = self.clone();
        m.created_unix = 0;
        sha256_hex(serde_json::to_string(&m).expect("manifest serializes").as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| LoatError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| LoatError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LoatError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LoatError::malformed(path, e.to_string()))
    }

    /// Inputs whose current bytes no longer match the recorded hash.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(p, h)| file_sha256(Path::new(p)).map_or(true, |now| &now != *h))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_timestamp() {
        let a = RunManifest::new(vec!["x".into()], serde_json::json!({"k": 1})).seed("seed", 3);
        let mut b = a.clone();
        b.created_unix += 100;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seeds.insert("seed".into(), 4);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn sha_of_empty() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
