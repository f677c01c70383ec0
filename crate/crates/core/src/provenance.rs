//! Artifact provenance and atomic file output.
//!
//! Every file the pipeline writes records the SHA-256 of the resolved config
//! and the base seed, either as a leading `#` comment line (CSV) or as a
//! `provenance` field (JSON / tensor headers). Writes go through a temp file
//! and rename so partially written artifacts never appear under their final
//! name.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Identity of the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Leading comment line for CSV artifacts.
    pub fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename). Creates parent directories as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize `value` as pretty JSON with a trailing newline and write it
/// atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    atomic_write(path, &body)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read(path)?;
    Ok(serde_json::from_slice(&body)?)
}

/// Format a float so that parsing the text recovers the identical bits.
/// Rust's shortest-roundtrip `Display` already guarantees this; the function
/// exists to make the intent searchable at call sites.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
