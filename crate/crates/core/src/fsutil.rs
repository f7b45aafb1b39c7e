//! Atomic file output: every file is written to a temporary sibling and
//! renamed into place, so failed runs leave no partial files behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};

fn staged(path: &Path, bytes: &[u8]) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    Ok(tmp)
}

/// Paths with the bytes to write there.
pub type FileGroup = Vec<(PathBuf, Vec<u8>)>;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_group(&[(path.to_path_buf(), bytes.to_vec())])
}

/// Writes several files; either all of them appear or none do (best effort on
/// rename failure: already-renamed files are removed again).
pub fn write_atomic_group(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut temps = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        temps.push((path, staged(path, bytes)?));
    }
    let mut done: Vec<&PathBuf> = Vec::new();
    for (path, tmp) in temps {
        if let Err(e) = tmp.persist(path) {
            for p in done {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(path, e.error));
        }
        done.push(path);
    }
    Ok(())
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `base` with `.ext` appended (an existing extension is kept).
pub fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
