//! Hex/base64 helpers and serde adapters shared by the wire formats.
//!
//! Every text interface renders digests and keys as lowercase hex and
//! signatures and opaque byte blobs as standard base64.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("invalid base64: {0}")]
    Base64(String),
    #[error("bad length: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("truncated input at offset {0}")]
    Truncated(usize),
    #[error("trailing bytes after decode ({0} left)")]
    TrailingBytes(usize),
    #[error("invalid value: {0}")]
    Invalid(String),
}

pub fn to_hex(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

pub fn from_hex(s: &str) -> Result<Vec<u8>, CodecError> {
    hex::decode(s.trim()).map_err(|e| CodecError::Hex(e.to_string()))
}

/// Decode hex into a fixed-size array, rejecting wrong lengths.
pub fn from_hex_array<const N: usize>(s: &str) -> Result<[u8; N], CodecError> {
    let v = from_hex(s)?;
    let actual = v.len();
    v.try_into().map_err(|_| CodecError::Length {
        expected: N,
        actual,
    })
}

pub fn to_base64(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

pub fn from_base64(s: &str) -> Result<Vec<u8>, CodecError> {
    BASE64
        .decode(s.trim())
        .map_err(|e| CodecError::Base64(e.to_string()))
}

/// Seconds since the unix epoch.
pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Serde adapter for fixed-size byte arrays rendered as lowercase hex.
pub mod hex_array {
    use super::*;

    pub fn serialize<S: Serializer, const N: usize>(
        bytes: &[u8; N],
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        de: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(de)?;
        from_hex_array(&s).map_err(serde::de::Error::custom)
    }
}
