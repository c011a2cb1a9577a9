//! Binary container framing shared by checkpoints and scene files:
//! magic, u16 version, u32 header length, JSON header, payload, SHA-256.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DIGEST_LEN: usize = 32;

pub fn encode<H: Serialize>(magic: &str, version: u16, header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Header(e.to_string()))?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::Header("header too large".into()))?;
    let mut out = Vec::with_capacity(10 + json.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(magic.as_bytes());
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Validates magic, version and digest; returns the header and payload.
pub fn decode<'a, H: DeserializeOwned>(bytes: &'a [u8], magic: &'static str, version: u16) -> Result<(H, &'a [u8])> {
    if bytes.len() < 4 || &bytes[..4] != magic.as_bytes() {
        return Err(Error::BadMagic { expected: magic });
    }
    if bytes.len() >= 6 {
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found != version {
            return Err(Error::Version { found, supported: version });
        }
    }
    if bytes.len() < 10 + DIGEST_LEN {
        return Err(Error::Digest);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Digest);
    }
    let len = u32::from_le_bytes([body[6], body[7], body[8], body[9]]) as usize;
    let rest = &body[10..];
    if rest.len() < len {
        return Err(Error::Header("header length exceeds file".into()));
    }
    let header = serde_json::from_slice(&rest[..len]).map_err(|e| Error::Header(e.to_string()))?;
    Ok((header, &rest[len..]))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
