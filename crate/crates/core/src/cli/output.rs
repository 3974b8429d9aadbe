//! Write-once artifact files and run manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to `dir/name` unless that file already exists.
///
/// An existing file with the same bytes is left alone. A different one is kept
/// and the new contents go to `stem-<hash>.ext` instead. Returns the path holding `contents`.
pub fn write_once(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let target = dir.join(name);
    let candidate = match std::fs::read(&target) {
        Ok(existing) if existing == contents => return Ok(target),
        Ok(_) => {
            let p = Path::new(name);
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
            let short = &sha256_hex(contents)[..12];
            let file = match p.extension().and_then(|e| e.to_str()) {
                Some(ext) => format!("{stem}-{short}.{ext}"),
                None => format!("{stem}-{short}"),
            };
            let alt = dir.join(file);
            if std::fs::read(&alt).is_ok_and(|b| b == contents) {
                return Ok(alt);
            }
            log::warn!("{} exists with different contents; writing {}", target.display(), alt.display());
            alt
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => target,
        Err(e) => return Err(Error::io(&target, e)),
    };
    std::fs::write(&candidate, contents).map_err(|e| Error::io(&candidate, e))?;
    Ok(candidate)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the serialized config below.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}
