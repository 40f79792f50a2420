//! Versioned binary container used for tensors, fitted learners, ensembles
//! and network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      [u8; 4]
//! version    u32
//! length     u64      payload byte count
//! payload    [u8; length]
//! digest     [u8; 32] SHA-256 of payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {found} (max {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("container truncated")]
    Truncated,
    #[error("payload digest mismatch")]
    DigestMismatch,
    #[error("payload encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

pub fn encode(magic: [u8; 4], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 48);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&Sha256::digest(payload));
    out
}

/// Returns `(version, payload)`.
pub fn decode(magic: [u8; 4], max_version: u32, bytes: &[u8]) -> Result<(u32, Vec<u8>), ContainerError> {
    if bytes.len() < 16 {
        return Err(ContainerError::Truncated);
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(ContainerError::BadMagic { expected: magic, found });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version == 0 || version > max_version {
        return Err(ContainerError::UnsupportedVersion { found: version, supported: max_version });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).ok_or(ContainerError::Truncated)?;
    if bytes.len() != end + 32 {
        return Err(ContainerError::Truncated);
    }
    let payload = &bytes[16..end];
    if Sha256::digest(payload).as_slice() != &bytes[end..] {
        return Err(ContainerError::DigestMismatch);
    }
    Ok((version, payload.to_vec()))
}

pub fn write_file(path: &Path, magic: [u8; 4], version: u32, payload: &[u8]) -> Result<(), ContainerError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(magic, version, payload))?;
    Ok(())
}

pub fn read_file(path: &Path, magic: [u8; 4], max_version: u32) -> Result<(u32, Vec<u8>), ContainerError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(magic, max_version, &bytes)
}

/// Serializes a value into a container. `f64` values survive bit-exactly
/// (JSON encoding uses shortest round-trip formatting, decoding is exact).
pub fn to_bytes<T: Serialize>(magic: [u8; 4], version: u32, value: &T) -> Result<Vec<u8>, ContainerError> {
    Ok(encode(magic, version, &serde_json::to_vec(value)?))
}

pub fn from_bytes<T: DeserializeOwned>(magic: [u8; 4], max_version: u32, bytes: &[u8]) -> Result<T, ContainerError> {
    let (_, payload) = decode(magic, max_version, bytes)?;
    Ok(serde_json::from_slice(&payload)?)
}

/// Hex SHA-256 of arbitrary bytes; used for content addressing.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let bytes = encode(*b"TEST", 1, b"hello");
        assert_eq!(decode(*b"TEST", 1, &bytes).unwrap(), (1, b"hello".to_vec()));

        let mut bad = bytes.clone();
        bad[17] ^= 1;
        assert!(matches!(decode(*b"TEST", 1, &bad), Err(ContainerError::DigestMismatch)));
        assert!(matches!(decode(*b"NOPE", 1, &bytes), Err(ContainerError::BadMagic { .. })));
        assert!(matches!(decode(*b"TEST", 1, &bytes[..20]), Err(ContainerError::Truncated)));
        let v2 = encode(*b"TEST", 2, b"x");
        assert!(matches!(decode(*b"TEST", 1, &v2), Err(ContainerError::UnsupportedVersion { .. })));
    }

    #[test]
    fn floats_survive_bit_exactly() {
        let xs = vec![0.1f64, 1.0 / 3.0, -2.5e-300, f64::MAX, 5e-324, 123456.789e10];
        let bytes = to_bytes(*b"FLTS", 1, &xs).unwrap();
        let back: Vec<f64> = from_bytes(*b"FLTS", 1, &bytes).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
