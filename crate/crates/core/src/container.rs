//! Binary container shared by checkpoints, reconstruction datasets and
//! synthetic datasets:
//!
//! ```text
//! magic[4] | version: u32 LE | header_len: u32 LE | header: UTF-8 JSON | payload: f64 LE…
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Serializes a container into bytes.
pub fn encode<H: Serialize>(magic: [u8; 4], version: u32, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Format("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decoded container: version, header and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<H> {
    pub version: u32,
    pub header: H,
    pub payload: Vec<f64>,
}

/// Parses a container, rejecting wrong magic, versions above `max_version`
/// and payloads that are not a whole number of `f64`s.
pub fn decode<H: DeserializeOwned>(bytes: &[u8], magic: [u8; 4], max_version: u32) -> Result<Decoded<H>> {
    let truncated = |expected: usize| Error::TruncatedFile {
        what: "container".into(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadContainerMagic { found, expected: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version == 0 || version > max_version {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(truncated(body));
    }
    let header = serde_json::from_slice(&bytes[12..body])?;
    let rest = &bytes[body..];
    if !rest.len().is_multiple_of(8) {
        return Err(Error::Format(format!("payload of {} bytes is not a whole number of f64", rest.len())));
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Decoded { version, header, payload })
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
