//! Run manifests written next to every output as `<out>.manifest`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Input path to sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            command,
            inputs: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn add_input(&mut self, path: &Path, contents: &[u8]) {
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(contents)),
        );
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes `<out>.manifest`, or prints to stderr when there is no output path.
    pub fn emit(&self, out: Option<&Path>) -> Result<(), Failure> {
        match out {
            Some(out) => write_file(&sibling(out, "manifest"), self.to_json_string().as_bytes()),
            None => {
                eprint!("manifest: {}", self.to_json_string());
                Ok(())
            }
        }
    }
}

/// `<path>.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .map_err(|e| Failure::environment(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<String, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::environment(anyhow::anyhow!("{}: {e}", path.display())))?;
    manifest.add_input(path, text.as_bytes());
    Ok(text)
}
