//! `.sif` files: one scenario per file, gzip-compressed UTF-8 JSON.
//!
//! Floats are written in their shortest round-trip decimal form and parsed
//! exactly, so `read(write(d)) == d` down to the bit patterns.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};
use serde_json::Value;

use super::{validate_scenario, ScenarioDescription, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const SIF_EXTENSION: &str = "sif";

/// Serializes without validating. The gzip header carries no timestamp, so
/// equal scenarios always encode to equal bytes.
pub fn encode_scenario(desc: &ScenarioDescription) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(desc).map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut enc = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
    enc.write_all(&json)
        .and_then(|_| enc.finish())
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn decode_scenario(bytes: &[u8]) -> Result<ScenarioDescription> {
    let mut json = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut json)
        .map_err(|e| Error::Corrupt(format!("decompression failed: {e}")))?;
    let doc: Value = serde_json::from_slice(&json).map_err(|e| Error::Corrupt(format!("invalid JSON: {e}")))?;
    match doc.get("format_version").and_then(Value::as_str) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(Error::UnsupportedVersion(other.to_string())),
        None => return Err(Error::Corrupt("missing format_version".into())),
    }
    serde_json::from_value(doc).map_err(|e| Error::Corrupt(format!("schema mismatch: {e}")))
}

/// Validates and writes a scenario file.
pub fn write_scenario(desc: &ScenarioDescription, path: impl AsRef<Path>) -> Result<()> {
    let report = validate_scenario(desc);
    if !report.passed() {
        return Err(Error::Invalid(report));
    }
    let bytes = encode_scenario(desc)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<ScenarioDescription> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scenario(&bytes)
}
