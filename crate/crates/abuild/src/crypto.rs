//! Hashing, domain-separated hashing, Ed25519 signatures, and the canonical
//! byte encoding used by every signed or hashed structure.
//!
//! All measurement values in the system are SHA-256 digests. Structures that
//! get signed or hashed are first serialized with [`Encoder`]: fields in
//! declared order, integers as unsigned 64-bit big-endian, byte fields
//! length-prefixed with a u32 big-endian, lists length-prefixed then
//! element-wise, absent optional fields encoded as zero length. The encoding
//! is injective for distinct values and byte-identical across platforms.

use std::fmt;

use ed25519_dalek::{Signer as _, Verifier as _};
use rand::RngCore as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{self, CodecError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be exactly 32 bytes, got {0}")]
    BadSeedLength(usize),
    #[error("unknown domain tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

// ---------------------------------------------------------------------------
// Digest
// ---------------------------------------------------------------------------

/// A 32-byte SHA-256 value; the universal measurement currency.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    /// The all-zero digest, used as the "no parent" marker for root commits.
    pub fn zero() -> Self {
        Digest([0u8; 32])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        codec::to_hex(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        Ok(Digest(codec::from_hex_array(s)?))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Keys and signatures
// ---------------------------------------------------------------------------

/// A 32-byte Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VerifyingKey([u8; 32]);

impl VerifyingKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        VerifyingKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        codec::to_hex(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        Ok(VerifyingKey(codec::from_hex_array(s)?))
    }
}

impl fmt::Display for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({})", self.to_hex())
    }
}

impl Serialize for VerifyingKey {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for VerifyingKey {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        VerifyingKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A 64-byte Ed25519 signature; serialized as base64 in JSON interfaces.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; 64]);

impl Signature {
    pub fn from_bytes(bytes: [u8; 64]) -> Self {
        Signature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    pub fn to_base64(&self) -> String {
        codec::to_base64(&self.0)
    }

    pub fn from_base64(s: &str) -> Result<Self, CodecError> {
        let v = codec::from_base64(s)?;
        let actual = v.len();
        let arr: [u8; 64] = v.try_into().map_err(|_| CodecError::Length {
            expected: 64,
            actual,
        })?;
        Ok(Signature(arr))
    }

    pub fn to_hex(&self) -> String {
        codec::to_hex(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        Ok(Signature(codec::from_hex_array(s)?))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_base64())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Signature::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// An Ed25519 key pair. The signing half never leaves this struct except
/// through [`KeyPair::seed`] for explicit persistence.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair(pub {})", self.verifying_key().to_hex())
    }
}

impl KeyPair {
    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(self.signing.verifying_key().to_bytes())
    }

    /// The 32-byte seed the pair was derived from.
    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn seed_hex(&self) -> String {
        codec::to_hex(&self.seed())
    }

    pub fn from_seed_hex(s: &str) -> Result<Self, CryptoError> {
        let seed: [u8; 32] = codec::from_hex_array(s)?;
        Ok(keygen(Some(&seed))?)
    }
}

/// Generate an Ed25519 key pair, deterministically from a 32-byte seed when
/// one is given and from system entropy otherwise.
pub fn keygen(seed: Option<&[u8]>) -> Result<KeyPair, CryptoError> {
    let seed: [u8; 32] = match seed {
        Some(s) => s
            .try_into()
            .map_err(|_| CryptoError::BadSeedLength(s.len()))?,
        None => {
            let mut buf = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut buf);
            buf
        }
    };
    Ok(KeyPair {
        signing: ed25519_dalek::SigningKey::from_bytes(&seed),
    })
}

/// Sign a canonical payload. Only canonicalized bytes can be signed; the
/// type system rules out ad-hoc payload serialization at call sites.
pub fn sign(key: &KeyPair, payload: &CanonicalBytes) -> Signature {
    Signature(key.signing.sign(payload.as_bytes()).to_bytes())
}

/// Verify a signature over a canonical payload. Returns false on any
/// mismatch, including structurally invalid keys or signatures.
pub fn verify(vk: &VerifyingKey, payload: &CanonicalBytes, sig: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&vk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(payload.as_bytes(), &sig).is_ok()
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

/// Domain labels keeping the different hashing contexts from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DomainTag {
    /// Merkle leaves and per-file hashes.
    Leaf = 0x00,
    /// Interior Merkle nodes.
    Node = 0x01,
    /// Attestation document signing payloads.
    Attestation = 0x02,
    /// Signed tree head payloads.
    TreeHead = 0x03,
    /// Image measurements and repository snapshot hashes.
    Snapshot = 0x04,
}

impl DomainTag {
    pub fn from_byte(b: u8) -> Result<Self, CryptoError> {
        match b {
            0x00 => Ok(DomainTag::Leaf),
            0x01 => Ok(DomainTag::Node),
            0x02 => Ok(DomainTag::Attestation),
            0x03 => Ok(DomainTag::TreeHead),
            0x04 => Ok(DomainTag::Snapshot),
            other => Err(CryptoError::UnknownTag(other)),
        }
    }
}

/// Plain SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over a one-byte domain tag followed by the concatenated parts.
pub fn hash_tagged<I, P>(tag: DomainTag, parts: I) -> Digest
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    hasher.update([tag as u8]);
    for part in parts {
        hasher.update(part.as_ref());
    }
    Digest(hasher.finalize().into())
}

// ---------------------------------------------------------------------------
// Canonical encoding
// ---------------------------------------------------------------------------

/// Deterministic serialization of a structured value, safe to hash or sign.
#[derive(Clone, PartialEq, Eq)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn from_vec(bytes: Vec<u8>) -> Self {
        CanonicalBytes(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for CanonicalBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalBytes({} bytes)", self.0.len())
    }
}

impl From<&Digest> for CanonicalBytes {
    fn from(d: &Digest) -> Self {
        CanonicalBytes(d.as_bytes().to_vec())
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for CanonicalBytes {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&codec::to_base64(&self.0))
    }
}

impl<'de> Deserialize<'de> for CanonicalBytes {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        codec::from_base64(&s)
            .map(CanonicalBytes)
            .map_err(serde::de::Error::custom)
    }
}

/// Builder for the canonical encoding.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    /// Unsigned 64-bit big-endian, no prefix.
    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// u32 big-endian length prefix followed by the raw bytes.
    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn digest(self, d: &Digest) -> Self {
        self.bytes(d.as_bytes())
    }

    /// Absent optional fields encode as zero length.
    pub fn opt_bytes(self, b: Option<&[u8]>) -> Self {
        self.bytes(b.unwrap_or(&[]))
    }

    /// List count as u32 big-endian; elements follow element-wise.
    pub fn list_len(mut self, n: usize) -> Self {
        self.buf.extend_from_slice(&(n as u32).to_be_bytes());
        self
    }

    pub fn finish(self) -> CanonicalBytes {
        CanonicalBytes(self.buf)
    }
}

/// Bounds-checked reader for the canonical encoding. Inputs are untrusted;
/// every read validates length before touching the buffer and a final
/// [`Decoder::finish`] rejects trailing bytes.
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() - self.pos < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|e| CodecError::Invalid(e.to_string()))
    }

    pub fn digest(&mut self) -> Result<Digest, CodecError> {
        let b = self.bytes()?;
        let arr: [u8; 32] = b.try_into().map_err(|_| CodecError::Length {
            expected: 32,
            actual: b.len(),
        })?;
        Ok(Digest(arr))
    }

    pub fn opt_fixed<const N: usize>(&mut self) -> Result<Option<[u8; N]>, CodecError> {
        let b = self.bytes()?;
        if b.is_empty() {
            return Ok(None);
        }
        let arr: [u8; N] = b.try_into().map_err(|_| CodecError::Length {
            expected: N,
            actual: b.len(),
        })?;
        Ok(Some(arr))
    }

    pub fn list_len(&mut self) -> Result<usize, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos != self.data.len() {
            return Err(CodecError::TrailingBytes(self.data.len() - self.pos));
        }
        Ok(())
    }
}
