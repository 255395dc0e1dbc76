//! Run manifests: resolved options, versions, seed and output digests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FORMAT: &str = "symcanon-manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub cli_version: String,
    pub core_version: String,
    pub seed: Option<u64>,
    /// Resolved options; valid input for `--config`.
    pub config: Value,
    pub outputs: Vec<OutputFile>,
    pub summary: Value,
}

/// Collects written files for the manifest.
pub struct Outputs {
    files: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

impl Outputs {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        self.files.push(OutputFile {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes the manifest itself; it is not listed among the outputs.
    pub fn finish<C: Serialize>(
        self,
        path: &Path,
        command: &str,
        seed: Option<u64>,
        config: &C,
        summary: Value,
    ) -> Result<PathBuf> {
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            command: command.into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            core_version: symcanon::VERSION.into(),
            seed,
            config: serde_json::to_value(config)?,
            outputs: self.files,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        Ok(path.to_path_buf())
    }
}

/// `dir/name.ext` → `dir/name.manifest.json`.
pub fn manifest_for_file(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_names() {
        assert_eq!(
            manifest_for_file(Path::new("out/a.canonical.xyz")),
            Path::new("out/a.canonical.manifest.json")
        );
        assert_eq!(
            manifest_for_file(Path::new("report.json")),
            Path::new("report.manifest.json")
        );
    }
}
