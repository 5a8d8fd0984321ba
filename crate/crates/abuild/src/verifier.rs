//! Client-side verification: certificate checks, source binding, revocation
//! scanning, repository-claim comparison, and anytrust composition.
//!
//! Verdicts enumerate every failing check instead of stopping at the first,
//! so callers can pinpoint exactly which binding broke.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::crypto::{
    self, hash, CanonicalBytes, Decoder, Digest, Encoder, KeyPair, Signature, VerifyingKey,
};
use crate::enclave::verify_attestation;
use crate::log_service::{LogApi, LogError};
use crate::measurement::{snapshot_hash, RepoSnapshot};
use crate::merkle::{verify_consistency, verify_inclusion, EntryKind};
use crate::pipeline::Certificate;

/// Stable names for the individual verifier checks, as they appear in
/// verdicts and harness evidence.
pub mod checks {
    pub const ATTESTATION_SIGNATURE: &str = "attestation_signature";
    pub const PCR0_ALLOWLIST: &str = "pcr0_allowlist";
    pub const FIRMWARE_MIN: &str = "firmware_min";
    pub const ARTIFACT_HASH: &str = "artifact_hash";
    pub const INCLUSION_PROOF: &str = "inclusion_proof";
    pub const TREE_HEAD_SIGNATURE: &str = "tree_head_signature";
    pub const LOG_CONSISTENCY: &str = "log_consistency";
    pub const REVOCATION: &str = "revocation";
    pub const WITNESS_CONFIRMATIONS: &str = "witness_confirmations";
    pub const SOURCE_BINDING: &str = "source_binding";
    pub const REPOSITORY_CLAIM: &str = "repository_claim";
    pub const ANYTRUST_QUORUM: &str = "anytrust_quorum";
    pub const COMMIT_AGREEMENT: &str = "commit_agreement";
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("anytrust_k must be at least 1")]
    BadAnytrustK,
    #[error("unparseable policy: {0}")]
    Parse(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

fn default_witness_confirmations() -> u32 {
    1
}

fn default_anytrust_k() -> u32 {
    1
}

/// Everything the verifier is configured to trust.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustPolicy {
    /// Vendor name to vendor root verifying key.
    pub trusted_roots: BTreeMap<String, VerifyingKey>,
    /// Acceptable whole-image measurements.
    pub allowed_pcr0: BTreeSet<Digest>,
    /// Minimum firmware version per vendor; vendors not listed are
    /// unconstrained.
    #[serde(default)]
    pub min_firmware: BTreeMap<String, String>,
    /// Key the transparency log signs tree heads with.
    pub log_key: VerifyingKey,
    /// How many witness confirmations a certificate needs. The direct
    /// live-log consistency check counts as one; higher values require
    /// external witness infrastructure.
    #[serde(default = "default_witness_confirmations")]
    pub witness_confirmations_required: u32,
    /// Distinct vendors required by [`compose_verify`].
    #[serde(default = "default_anytrust_k")]
    pub anytrust_k: u32,
    /// Key revocation notices must be signed with; without one, notices in
    /// the log are untrusted and ignored.
    #[serde(default)]
    pub revocation_key: Option<VerifyingKey>,
}

impl TrustPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.anytrust_k < 1 {
            return Err(PolicyError::BadAnytrustK);
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let policy: TrustPolicy = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

/// Compare dotted version strings component-wise; numeric components
/// compare as integers, anything else falls back to string order, and
/// missing components count as zero.
pub fn version_at_least(actual: &str, minimum: &str) -> bool {
    let a: Vec<&str> = actual.split('.').collect();
    let m: Vec<&str> = minimum.split('.').collect();
    for i in 0..a.len().max(m.len()) {
        let av = a.get(i).copied().unwrap_or("0");
        let mv = m.get(i).copied().unwrap_or("0");
        let ord = match (av.parse::<u64>(), mv.parse::<u64>()) {
            (Ok(an), Ok(mn)) => an.cmp(&mn),
            _ => av.cmp(mv),
        };
        match ord {
            std::cmp::Ordering::Greater => return true,
            std::cmp::Ordering::Less => return false,
            std::cmp::Ordering::Equal => continue,
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Revocation notices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevocationScope {
    ByVendorFirmware { vendor: String, version: String },
    ByPcr0(Digest),
    ByLogIndex(u64),
}

/// A log record declaring some class of builds untrustworthy. Verifiers
/// honor notices whose issuer signature checks out under the policy's
/// revocation key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationNotice {
    pub scope: RevocationScope,
    pub reason: String,
    pub issuer_sig: Signature,
}

impl RevocationNotice {
    pub fn create(scope: RevocationScope, reason: impl Into<String>, issuer: &KeyPair) -> Self {
        let reason = reason.into();
        let payload = Self::signing_payload(&scope, &reason);
        RevocationNotice {
            issuer_sig: crypto::sign(issuer, &payload),
            scope,
            reason,
        }
    }

    fn encode_scope(enc: Encoder, scope: &RevocationScope) -> Encoder {
        match scope {
            RevocationScope::ByVendorFirmware { vendor, version } => {
                enc.u64(0).str(vendor).str(version)
            }
            RevocationScope::ByPcr0(digest) => enc.u64(1).digest(digest),
            RevocationScope::ByLogIndex(index) => enc.u64(2).u64(*index),
        }
    }

    pub fn signing_payload(scope: &RevocationScope, reason: &str) -> CanonicalBytes {
        Self::encode_scope(Encoder::new(), scope).str(reason).finish()
    }

    pub fn sig_valid(&self, issuer_key: &VerifyingKey) -> bool {
        let payload = Self::signing_payload(&self.scope, &self.reason);
        crypto::verify(issuer_key, &payload, &self.issuer_sig)
    }

    pub fn canonical_bytes(&self) -> CanonicalBytes {
        Self::encode_scope(Encoder::new(), &self.scope)
            .str(&self.reason)
            .bytes(self.issuer_sig.as_bytes())
            .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let scope = match dec.u64()? {
            0 => RevocationScope::ByVendorFirmware {
                vendor: dec.str()?,
                version: dec.str()?,
            },
            1 => RevocationScope::ByPcr0(dec.digest()?),
            2 => RevocationScope::ByLogIndex(dec.u64()?),
            other => {
                return Err(CodecError::Invalid(format!(
                    "unknown revocation scope {other}"
                )))
            }
        };
        let reason = dec.str()?;
        let sig: [u8; 64] = dec
            .opt_fixed::<64>()?
            .ok_or_else(|| CodecError::Invalid("missing issuer signature".into()))?;
        dec.finish()?;
        Ok(RevocationNotice {
            scope,
            reason,
            issuer_sig: Signature::from_bytes(sig),
        })
    }

    /// Whether this notice covers the given certificate.
    pub fn applies_to(&self, cert: &Certificate) -> bool {
        match &self.scope {
            RevocationScope::ByVendorFirmware { vendor, version } => {
                cert.attestation.vendor_name == *vendor
                    && cert.attestation.firmware_version == *version
            }
            RevocationScope::ByPcr0(digest) => cert.attestation.pcrs.pcr0 == *digest,
            RevocationScope::ByLogIndex(index) => cert.log_index == *index,
        }
    }
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckFailure {
    pub check: String,
    pub detail: String,
}

/// Outcome of a verification run; accepted exactly when no check failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub failures: Vec<CheckFailure>,
}

impl Verdict {
    pub fn from_failures(failures: Vec<CheckFailure>) -> Self {
        Verdict {
            accepted: failures.is_empty(),
            failures,
        }
    }

    pub fn failed_checks(&self) -> BTreeSet<&str> {
        self.failures.iter().map(|f| f.check.as_str()).collect()
    }

    pub fn has_failure(&self, check: &str) -> bool {
        self.failures.iter().any(|f| f.check == check)
    }
}

fn failure(check: &str, detail: impl Into<String>) -> CheckFailure {
    CheckFailure {
        check: check.to_string(),
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Certificate verification
// ---------------------------------------------------------------------------

fn scan_revocations(
    cert: &Certificate,
    policy: &TrustPolicy,
    log: &dyn LogApi,
    size: u64,
) -> Result<Vec<String>, LogError> {
    let Some(revocation_key) = &policy.revocation_key else {
        return Ok(Vec::new());
    };
    let mut hits = Vec::new();
    for index in 0..size {
        let entry = log.entry(index)?;
        if entry.kind != EntryKind::RevocationNotice {
            continue;
        }
        let Ok(notice) = RevocationNotice::from_canonical(entry.body.as_bytes()) else {
            continue;
        };
        if notice.sig_valid(revocation_key) && notice.applies_to(cert) {
            hits.push(format!(
                "log entry {index} revokes this build: {}",
                notice.reason
            ));
        }
    }
    Ok(hits)
}

/// Run the full certificate check suite against the artifact bytes, the
/// policy, and a live view of the log. Every failure is recorded
/// independently under its check name.
pub fn verify_certificate(
    cert: &Certificate,
    artifact: &[u8],
    policy: &TrustPolicy,
    log: &dyn LogApi,
) -> Verdict {
    let mut failures = Vec::new();
    let at = &cert.attestation;

    // 1. Attestation signature chains to a trusted vendor root.
    if let Err(e) = verify_attestation(at, &policy.trusted_roots) {
        failures.push(failure(checks::ATTESTATION_SIGNATURE, e.to_string()));
    }

    // 2. The booted image is one the policy allows.
    if !policy.allowed_pcr0.contains(&at.pcrs.pcr0) {
        failures.push(failure(
            checks::PCR0_ALLOWLIST,
            format!("pcr0 {} is not in the allowlist", at.pcrs.pcr0),
        ));
    }

    // 3. Firmware meets the vendor's minimum.
    if let Some(min) = policy.min_firmware.get(&at.vendor_name) {
        if !version_at_least(&at.firmware_version, min) {
            failures.push(failure(
                checks::FIRMWARE_MIN,
                format!(
                    "firmware {} is below the required minimum {min}",
                    at.firmware_version
                ),
            ));
        }
    }

    // 4. The artifact in hand is the one that was attested.
    if hash(artifact) != at.artifact_hash {
        failures.push(failure(
            checks::ARTIFACT_HASH,
            format!(
                "artifact hashes to {}, attestation claims {}",
                hash(artifact),
                at.artifact_hash
            ),
        ));
    }

    // 5. The attestation's log entry is under the certificate's tree head.
    let leaf = cert.leaf_hash();
    let coherent =
        cert.inclusion.index == cert.log_index && cert.inclusion.size == cert.tree_head.size;
    if !coherent || !verify_inclusion(&leaf, &cert.inclusion, &cert.tree_head.root) {
        failures.push(failure(
            checks::INCLUSION_PROOF,
            "inclusion proof does not bind the attestation to the tree head",
        ));
    }

    // 6. The tree head is signed by the policy's log key.
    if !cert.tree_head.verify_under(&policy.log_key) {
        failures.push(failure(
            checks::TREE_HEAD_SIGNATURE,
            "tree head signature invalid under the policy log key",
        ));
    }

    // 7. A fresh head from the live log extends the certificate's head.
    let mut fresh_sth = None;
    match log.latest_sth() {
        Err(e) => failures.push(failure(
            checks::LOG_CONSISTENCY,
            format!("log unavailable: {e}"),
        )),
        Ok(fresh) => {
            if !fresh.verify_under(&policy.log_key) {
                failures.push(failure(
                    checks::LOG_CONSISTENCY,
                    "fresh tree head signature invalid",
                ));
            } else if fresh.size < cert.tree_head.size {
                failures.push(failure(
                    checks::LOG_CONSISTENCY,
                    format!(
                        "live log size {} is below the certificate head size {}",
                        fresh.size, cert.tree_head.size
                    ),
                ));
            } else {
                match log.consistency_proof(cert.tree_head.size, fresh.size) {
                    Err(e) => failures.push(failure(
                        checks::LOG_CONSISTENCY,
                        format!("no consistency proof: {e}"),
                    )),
                    Ok(proof) => {
                        if verify_consistency(&cert.tree_head.root, &fresh.root, &proof) {
                            fresh_sth = Some(fresh);
                        } else {
                            failures.push(failure(
                                checks::LOG_CONSISTENCY,
                                "certificate tree head is inconsistent with the live log",
                            ));
                        }
                    }
                }
            }
        }
    }

    // 8. No applicable revocation notice in the log.
    match &fresh_sth {
        Some(fresh) => match scan_revocations(cert, policy, log, fresh.size) {
            Ok(hits) => {
                for hit in hits {
                    failures.push(failure(checks::REVOCATION, hit));
                }
            }
            Err(e) => failures.push(failure(
                checks::REVOCATION,
                format!("revocation scan failed: {e}"),
            )),
        },
        None => failures.push(failure(
            checks::REVOCATION,
            "revocation status unknown (no consistent live view)",
        )),
    }

    // Witness confirmations: the direct live-log check above counts as one.
    let confirmations = u32::from(fresh_sth.is_some());
    if confirmations < policy.witness_confirmations_required {
        failures.push(failure(
            checks::WITNESS_CONFIRMATIONS,
            format!(
                "{confirmations} confirmation(s) available, policy requires {}",
                policy.witness_confirmations_required
            ),
        ));
    }

    Verdict::from_failures(failures)
}

/// Source binding: the snapshot in hand hashes to the certificate's commit
/// hash.
pub fn verify_source_binding(cert: &Certificate, snapshot: &RepoSnapshot) -> bool {
    match snapshot_hash(snapshot) {
        Ok(ct) => ct == cert.attestation.commit_hash,
        Err(_) => false,
    }
}

// ---------------------------------------------------------------------------
// Repository claim
// ---------------------------------------------------------------------------

/// The log coordinates an artifact author publishes out of band for their
/// genuine build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRef {
    pub log_index: u64,
    pub leaf_hash: Digest,
}

impl CertificateRef {
    pub fn of(cert: &Certificate) -> Self {
        CertificateRef {
            log_index: cert.log_index,
            leaf_hash: cert.leaf_hash(),
        }
    }
}

/// Compare a presented certificate against the trusted published reference:
/// both the log index and the leaf hash must match.
pub fn verify_repository_claim(expected: &CertificateRef, presented: &Certificate) -> bool {
    presented.log_index == expected.log_index && presented.leaf_hash() == expected.leaf_hash
}

// ---------------------------------------------------------------------------
// Anytrust composition
// ---------------------------------------------------------------------------

/// Accept when at least `anytrust_k` individually valid certificates from
/// pairwise-distinct vendors agree on both the artifact hash and the commit
/// hash. On rejection, per-certificate failures are itemized.
pub fn compose_verify(
    certs: &[Certificate],
    artifact: &[u8],
    policy: &TrustPolicy,
    log: &dyn LogApi,
) -> Verdict {
    let mut itemized = Vec::new();
    let mut passing: Vec<&Certificate> = Vec::new();
    for (i, cert) in certs.iter().enumerate() {
        let verdict = verify_certificate(cert, artifact, policy, log);
        if verdict.accepted {
            passing.push(cert);
        } else {
            for f in verdict.failures {
                itemized.push(failure(
                    &f.check,
                    format!(
                        "cert[{i}] ({}): {}",
                        cert.attestation.vendor_name, f.detail
                    ),
                ));
            }
        }
    }

    // Passing certificates already agree on the artifact hash (each was
    // checked against the same bytes); group them by commit hash and count
    // distinct vendors per group.
    let mut by_commit: BTreeMap<Digest, BTreeSet<&str>> = BTreeMap::new();
    for cert in &passing {
        by_commit
            .entry(cert.attestation.commit_hash)
            .or_default()
            .insert(cert.attestation.vendor_name.as_str());
    }
    let best = by_commit.values().map(|v| v.len() as u32).max().unwrap_or(0);

    if best >= policy.anytrust_k {
        return Verdict::from_failures(Vec::new());
    }

    let mut failures = itemized;
    if by_commit.len() > 1 {
        failures.push(failure(
            checks::COMMIT_AGREEMENT,
            "valid certificates disagree on the commit hash",
        ));
    }
    failures.push(failure(
        checks::ANYTRUST_QUORUM,
        format!(
            "{best} distinct vendor(s) with agreeing valid certificates, policy requires {}",
            policy.anytrust_k
        ),
    ));
    Verdict::from_failures(failures)
}
