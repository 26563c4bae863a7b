//! Durable storage: model artifacts, classification history and labels.
//!
//! All writes either complete or leave the previous state intact. Whole files
//! (models, the active pointer) are replaced via write-to-temp, fsync, rename.
//! Logs (history, labels) are append-only with a CRC-32 per line so a torn
//! final line is detected and dropped on reopen.

pub mod canonical;
pub mod history;
pub mod labels;
pub mod models;

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

pub use canonical::to_canonical_bytes;
pub use history::{HistoryConfig, HistoryPage, HistoryQuery, HistoryStore, LabelFilter, StateRecord};
pub use labels::{LabelOutcome, LabelStore, LabeledSample};
pub use models::{
    decode_artifact, encode_artifact, fingerprint_samples, ModelArtifact, ModelStore, ModelSummary,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("schema version {found} is newer than supported version {supported}")]
    SchemaTooNew { found: u32, supported: u32 },
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("out-of-order record: {0}")]
    OutOfOrder(String),
}

/// Replaces `path` with `bytes` so readers see either the old or the new file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    // directory fsync makes the rename itself durable; not supported everywhere
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// `"{crc32:08x} {json}\n"`
pub(crate) fn encode_line(json: &[u8]) -> Vec<u8> {
    let mut out = format!("{:08x} ", crc32fast::hash(json)).into_bytes();
    out.extend_from_slice(json);
    out.push(b'\n');
    out
}

/// Returns the JSON part of a line (without newline) if its checksum holds.
pub(crate) fn decode_line(line: &[u8]) -> Option<&[u8]> {
    if line.len() < 9 || line[8] != b' ' {
        return None;
    }
    let crc = u32::from_str_radix(std::str::from_utf8(&line[..8]).ok()?, 16).ok()?;
    let json = &line[9..];
    (crc32fast::hash(json) == crc).then_some(json)
}
