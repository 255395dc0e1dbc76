pub mod canonicalize;
pub mod metrics;
pub mod sample;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config;
use crate::error::{CliError, Result};

/// State shared by all commands.
pub struct Ctx {
    pub out_dir: PathBuf,
    pub config: Option<Value>,
}

impl Ctx {
    pub fn resolve<F: Serialize, O: DeserializeOwned>(&self, flags: &F) -> Result<O> {
        config::resolve(flags, self.config.clone())
    }
}

const MOLECULE_EXTENSIONS: [&str; 3] = ["xyz", "sdf", "mol"];

pub fn is_molecule_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| MOLECULE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Molecule files in a directory, sorted by name.
pub fn molecule_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if is_molecule_file(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// A directory of molecule files, or a text file listing one path per line.
/// Blank lines and lines starting with `#` are skipped; relative paths are
/// taken relative to the list file.
pub fn molecule_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        return molecule_files_in(path);
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_files_resolve_relative_to_the_list() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.xyz"), "").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "").unwrap();
        std::fs::write(dir.path().join("list.txt"), "# train\na.xyz\n\n  sub/b.sdf \n").unwrap();
        let listed = molecule_files(&dir.path().join("list.txt")).unwrap();
        assert_eq!(listed, vec![dir.path().join("a.xyz"), dir.path().join("sub/b.sdf")]);
        let scanned = molecule_files(dir.path()).unwrap();
        assert_eq!(scanned, vec![dir.path().join("a.xyz")]);
    }
}
