//! Simulated TEE vendor: holds a vendor root key, measures images at boot,
//! and issues attestation documents binding the PCRs, the committed
//! snapshot hash, and the reported artifact hash.
//!
//! A handle models one enclave lifetime: measurements freeze at boot, the
//! client state ratchets forward, and exactly one attestation can be issued
//! before the handle is discarded. Nothing outside [`EnclaveHandle::attest`]
//! can mint a vendor-signed document, so the signed (pcrs, commit_hash,
//! artifact_hash) triple always reflects what some booted enclave held.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::crypto::{
    self, hash_tagged, CanonicalBytes, Decoder, Digest, DomainTag, Encoder, KeyPair, Signature,
    VerifyingKey,
};
use crate::measurement::{measure_image, EnclaveImage, MeasurementError, PcrSet};
use crate::pipeline::{EnclaveClientState, Phase, StateError};

pub const NONCE_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("vendor name must not be empty")]
    EmptyVendorName,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestationError {
    #[error("vendor {0:?} is not in the trusted root set")]
    UnknownVendor(String),
    #[error("attestation signature does not verify under the vendor root")]
    BadSignature,
}

// ---------------------------------------------------------------------------
// Vendor identity
// ---------------------------------------------------------------------------

/// One simulated hardware vendor: a name, the root signing key its
/// attestations chain to, and the firmware version its parts run.
#[derive(Debug, Clone)]
pub struct VendorIdentity {
    pub vendor_name: String,
    pub root_key: KeyPair,
    pub firmware_version: String,
}

impl VendorIdentity {
    pub fn new(
        vendor_name: impl Into<String>,
        root_key: KeyPair,
        firmware_version: impl Into<String>,
    ) -> Result<Self, EnclaveError> {
        let vendor_name = vendor_name.into();
        if vendor_name.is_empty() {
            return Err(EnclaveError::EmptyVendorName);
        }
        Ok(VendorIdentity {
            vendor_name,
            root_key,
            firmware_version: firmware_version.into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Attestation document
// ---------------------------------------------------------------------------

/// Vendor-signed record binding the booted measurements, the snapshot hash,
/// the artifact hash, and a caller-supplied nonce.
///
/// Serializes to JSON for the wire (hex digests, base64 signature) and to
/// canonical bytes for hashing and log storage; both forms round-trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationDocument {
    pub vendor_name: String,
    pub firmware_version: String,
    pub pcrs: PcrSet,
    pub commit_hash: Digest,
    pub artifact_hash: Digest,
    #[serde(with = "codec::hex_array")]
    pub nonce: [u8; NONCE_LEN],
    pub timestamp: u64,
    pub sig: Signature,
}

impl AttestationDocument {
    /// The digest the vendor root signs: a 0x02-tagged hash over the
    /// canonical encoding of every field before the signature.
    pub fn signing_digest(&self) -> Digest {
        hash_tagged(DomainTag::Attestation, [self.signed_fields().as_bytes()])
    }

    fn signed_fields(&self) -> CanonicalBytes {
        Encoder::new()
            .str(&self.vendor_name)
            .str(&self.firmware_version)
            .digest(&self.pcrs.pcr0)
            .digest(&self.pcrs.pcr1)
            .digest(&self.pcrs.pcr2)
            .digest(&self.commit_hash)
            .digest(&self.artifact_hash)
            .bytes(&self.nonce)
            .u64(self.timestamp)
            .finish()
    }

    pub fn canonical_bytes(&self) -> CanonicalBytes {
        let mut buf = self.signed_fields().as_bytes().to_vec();
        buf.extend_from_slice(
            Encoder::new().bytes(self.sig.as_bytes()).finish().as_bytes(),
        );
        CanonicalBytes::from_vec(buf)
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let vendor_name = dec.str()?;
        let firmware_version = dec.str()?;
        let pcrs = PcrSet {
            pcr0: dec.digest()?,
            pcr1: dec.digest()?,
            pcr2: dec.digest()?,
        };
        let commit_hash = dec.digest()?;
        let artifact_hash = dec.digest()?;
        let nonce: [u8; NONCE_LEN] = dec
            .opt_fixed::<NONCE_LEN>()?
            .ok_or_else(|| CodecError::Invalid("missing nonce".into()))?;
        let timestamp = dec.u64()?;
        let sig: [u8; 64] = dec
            .opt_fixed::<64>()?
            .ok_or_else(|| CodecError::Invalid("missing signature".into()))?;
        dec.finish()?;
        Ok(AttestationDocument {
            vendor_name,
            firmware_version,
            pcrs,
            commit_hash,
            artifact_hash,
            nonce,
            timestamp,
            sig: Signature::from_bytes(sig),
        })
    }
}

/// The field set of a document whose signature checked out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedAttestation {
    pub vendor_name: String,
    pub firmware_version: String,
    pub pcrs: PcrSet,
    pub commit_hash: Digest,
    pub artifact_hash: Digest,
    pub nonce: [u8; NONCE_LEN],
    pub timestamp: u64,
}

/// Verify a document against a set of trusted vendor roots. Any mutated
/// field invalidates the signature.
pub fn verify_attestation(
    doc: &AttestationDocument,
    trusted_roots: &BTreeMap<String, VerifyingKey>,
) -> Result<VerifiedAttestation, AttestationError> {
    let root = trusted_roots
        .get(&doc.vendor_name)
        .ok_or_else(|| AttestationError::UnknownVendor(doc.vendor_name.clone()))?;
    let payload = doc.signing_digest();
    if !crypto::verify(root, &CanonicalBytes::from(&payload), &doc.sig) {
        return Err(AttestationError::BadSignature);
    }
    Ok(VerifiedAttestation {
        vendor_name: doc.vendor_name.clone(),
        firmware_version: doc.firmware_version.clone(),
        pcrs: doc.pcrs,
        commit_hash: doc.commit_hash,
        artifact_hash: doc.artifact_hash,
        nonce: doc.nonce,
        timestamp: doc.timestamp,
    })
}

// ---------------------------------------------------------------------------
// Enclave handle
// ---------------------------------------------------------------------------

/// One booted enclave. Measurements never change after boot and the handle
/// serves at most one build before being dropped.
#[derive(Debug)]
pub struct EnclaveHandle {
    vendor: VendorIdentity,
    pcrs: PcrSet,
    client: EnclaveClientState,
}

/// Start a fresh enclave from an image; each call yields an independent
/// handle with its pcrs frozen to the image measurement.
pub fn boot(vendor: &VendorIdentity, image: &EnclaveImage) -> Result<EnclaveHandle, EnclaveError> {
    let pcrs = measure_image(image)?;
    Ok(EnclaveHandle {
        vendor: vendor.clone(),
        pcrs,
        client: EnclaveClientState::new(),
    })
}

impl EnclaveHandle {
    pub fn pcrs(&self) -> &PcrSet {
        &self.pcrs
    }

    pub fn vendor_name(&self) -> &str {
        &self.vendor.vendor_name
    }

    pub fn state(&self) -> &EnclaveClientState {
        &self.client
    }

    /// Ratchet in the snapshot hash; accepted exactly once, before any
    /// untrusted step runs.
    pub fn commit_snapshot(&mut self, ct: Digest) -> Result<(), StateError> {
        self.client.commit_snapshot(ct)
    }

    /// Mark the start of untrusted build execution.
    pub fn begin_build(&mut self) -> Result<(), StateError> {
        self.client.begin_build()
    }

    /// Record the artifact hash reported by the (untrusted) build.
    pub fn report_artifact(&mut self, a: Digest) -> Result<(), StateError> {
        self.client.report_artifact(a)
    }

    /// Issue the vendor-signed attestation document. Requires the client to
    /// have both measurements; single-shot per handle.
    pub fn attest(&mut self, nonce: [u8; NONCE_LEN]) -> Result<AttestationDocument, StateError> {
        if self.client.phase() != Phase::ArtifactReported {
            return Err(StateError::StateViolation {
                operation: "attest",
                expected: Phase::ArtifactReported,
                actual: self.client.phase(),
            });
        }
        let commit_hash = self
            .client
            .committed_ct()
            .expect("ArtifactReported implies committed ct");
        let artifact_hash = self
            .client
            .reported_a()
            .expect("ArtifactReported implies reported artifact hash");
        let mut doc = AttestationDocument {
            vendor_name: self.vendor.vendor_name.clone(),
            firmware_version: self.vendor.firmware_version.clone(),
            pcrs: self.pcrs,
            commit_hash,
            artifact_hash,
            nonce,
            timestamp: codec::unix_now(),
            sig: Signature::from_bytes([0u8; 64]),
        };
        let payload = doc.signing_digest();
        doc.sig = crypto::sign(&self.vendor.root_key, &CanonicalBytes::from(&payload));
        self.client.mark_attested()?;
        Ok(doc)
    }
}
