//! Persistent formats: the grid-file container, parameter checkpoints,
//! run configuration, and metric reports.
//!
//! Every format is a line-oriented text header (sidecar `.hdr` file) with,
//! where applicable, a raw little-endian `f32` payload in a separate `.bin`
//! file, so everything stays inspectable with standard tools. Parsers are
//! total: malformed input yields an error, never a panic.

pub mod checkpoint;
pub mod config;
pub mod gridfile;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("path {} has no file name", path.display())))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `<base>.hdr` and `<base>.bin` paths for a sidecar pair.
pub fn sidecar_paths(base: &Path) -> (PathBuf, PathBuf) {
    let mut hdr = base.as_os_str().to_os_string();
    hdr.push(".hdr");
    let mut bin = base.as_os_str().to_os_string();
    bin.push(".bin");
    (PathBuf::from(hdr), PathBuf::from(bin))
}

pub(crate) fn payload_to_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "payload length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn f32_to_payload(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits a header line into key and value at the first `:`.
pub(crate) fn header_line(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once(':')?;
    Some((k.trim(), v.trim()))
}
