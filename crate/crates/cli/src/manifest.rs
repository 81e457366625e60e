use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use reachctl::files::{read_bytes, sha256_hex, to_toml, write_file};
use serde::{Deserialize, Serialize};

/// Record of one command invocation: what went in, what came out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
    /// Path → SHA-256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// Path → SHA-256 of every file written.
    pub outputs: BTreeMap<String, String>,
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command,
            timestamp: timestamp(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path, hash: String) {
        self.inputs.insert(path.display().to_string(), hash);
    }

    /// Hash an output that is already on disk.
    pub fn output(&mut self, path: &Path) -> reachctl::Result<()> {
        let hash = sha256_hex(&read_bytes(path)?);
        self.outputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> reachctl::Result<()> {
        write_file(path, to_toml(self)?.as_bytes())
    }
}

/// `bundle.cfg` → `bundle.manifest.cfg`.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    out.with_extension("manifest.cfg")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path_replaces_extension() {
        assert_eq!(manifest_path_for(Path::new("out/bundle.cfg")), PathBuf::from("out/bundle.manifest.cfg"));
        assert_eq!(manifest_path_for(Path::new("bundle")), PathBuf::from("bundle.manifest.cfg"));
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest::new(vec!["reachctl".into(), "verify".into()]);
        m.input(Path::new("a.cfg"), "00".into());
        let back: RunManifest = toml::from_str(&to_toml(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
