//! Append-only Merkle tree over log entries, with signed tree heads,
//! inclusion proofs, and consistency proofs.
//!
//! The tree shape follows the Certificate Transparency construction
//! (RFC 6962 / RFC 9162): the root of n leaves splits at the largest power
//! of two below n, leaves are hashed with a 0x00 prefix and interior nodes
//! with 0x01, and the empty tree hashes to SHA-256 of the empty string.
//! Proof verification is pure and never errors: any mismatch returns false.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::crypto::{
    self, hash, hash_tagged, CanonicalBytes, Decoder, Digest, DomainTag, Encoder, KeyPair,
    Signature, VerifyingKey,
};
use crate::enclave::AttestationDocument;
use crate::verifier::RevocationNotice;

#[derive(Debug, Error)]
pub enum MerkleError {
    #[error("index {index} out of range for tree of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("size {requested} out of range (log has {size} leaves)")]
    SizeOutOfRange { requested: u64, size: u64 },
    #[error(transparent)]
    Entry(#[from] EntryError),
}

#[derive(Debug, Error)]
pub enum EntryError {
    #[error("{kind:?} body does not decode: {source}")]
    BadBody {
        kind: EntryKind,
        source: CodecError,
    },
    #[error("source audit entries must carry a submitter key and signature")]
    MissingSubmitterSignature,
    #[error("submitter signature does not verify")]
    BadSubmitterSignature,
}

// ---------------------------------------------------------------------------
// Log entries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    BuildAttestation,
    RevocationNotice,
    SourceAudit,
}

impl EntryKind {
    fn code(self) -> u64 {
        match self {
            EntryKind::BuildAttestation => 0,
            EntryKind::RevocationNotice => 1,
            EntryKind::SourceAudit => 2,
        }
    }

    fn from_code(code: u64) -> Result<Self, CodecError> {
        match code {
            0 => Ok(EntryKind::BuildAttestation),
            1 => Ok(EntryKind::RevocationNotice),
            2 => Ok(EntryKind::SourceAudit),
            other => Err(CodecError::Invalid(format!("unknown entry kind {other}"))),
        }
    }
}

/// A record in the transparency log. The body is the canonical encoding of
/// the kind's record type; source audits additionally carry the submitting
/// auditor's key and signature over the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub kind: EntryKind,
    pub body: CanonicalBytes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitter_key: Option<VerifyingKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitter_sig: Option<Signature>,
}

/// A vouching record an auditor submits for a specific snapshot hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceAudit {
    pub commit_hash: Digest,
    pub standard: String,
    pub comment: String,
}

impl SourceAudit {
    pub fn canonical_bytes(&self) -> CanonicalBytes {
        Encoder::new()
            .digest(&self.commit_hash)
            .str(&self.standard)
            .str(&self.comment)
            .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let audit = SourceAudit {
            commit_hash: dec.digest()?,
            standard: dec.str()?,
            comment: dec.str()?,
        };
        dec.finish()?;
        Ok(audit)
    }
}

impl LogEntry {
    pub fn build_attestation(doc: &AttestationDocument) -> Self {
        LogEntry {
            kind: EntryKind::BuildAttestation,
            body: doc.canonical_bytes(),
            submitter_key: None,
            submitter_sig: None,
        }
    }

    pub fn revocation_notice(notice: &RevocationNotice) -> Self {
        LogEntry {
            kind: EntryKind::RevocationNotice,
            body: notice.canonical_bytes(),
            submitter_key: None,
            submitter_sig: None,
        }
    }

    pub fn source_audit(audit: &SourceAudit, auditor: &KeyPair) -> Self {
        let body = audit.canonical_bytes();
        let sig = crypto::sign(auditor, &body);
        LogEntry {
            kind: EntryKind::SourceAudit,
            body,
            submitter_key: Some(auditor.verifying_key()),
            submitter_sig: Some(sig),
        }
    }

    /// Check the per-kind invariants: body decodes, and a source audit
    /// carries a valid submitter signature.
    pub fn validate(&self) -> Result<(), EntryError> {
        let bad = |source| EntryError::BadBody {
            kind: self.kind,
            source,
        };
        match self.kind {
            EntryKind::BuildAttestation => {
                AttestationDocument::from_canonical(self.body.as_bytes()).map_err(bad)?;
            }
            EntryKind::RevocationNotice => {
                RevocationNotice::from_canonical(self.body.as_bytes()).map_err(bad)?;
            }
            EntryKind::SourceAudit => {
                SourceAudit::from_canonical(self.body.as_bytes()).map_err(bad)?;
                let (Some(key), Some(sig)) = (&self.submitter_key, &self.submitter_sig) else {
                    return Err(EntryError::MissingSubmitterSignature);
                };
                if !crypto::verify(key, &self.body, sig) {
                    return Err(EntryError::BadSubmitterSignature);
                }
            }
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> CanonicalBytes {
        Encoder::new()
            .u64(self.kind.code())
            .bytes(self.body.as_bytes())
            .opt_bytes(self.submitter_key.as_ref().map(|k| k.as_bytes().as_slice()))
            .opt_bytes(self.submitter_sig.as_ref().map(|s| s.as_bytes().as_slice()))
            .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let entry = LogEntry {
            kind: EntryKind::from_code(dec.u64()?)?,
            body: CanonicalBytes::from_vec(dec.bytes()?.to_vec()),
            submitter_key: dec.opt_fixed::<32>()?.map(VerifyingKey::from_bytes),
            submitter_sig: dec.opt_fixed::<64>()?.map(Signature::from_bytes),
        };
        dec.finish()?;
        Ok(entry)
    }
}

/// Leaf digest of an entry: the 0x00-tagged hash of its canonical encoding.
pub fn entry_leaf_hash(entry: &LogEntry) -> Digest {
    hash_tagged(DomainTag::Leaf, [entry.canonical_bytes().as_bytes()])
}

// ---------------------------------------------------------------------------
// Proof and head records
// ---------------------------------------------------------------------------

/// Sibling path showing that the leaf at `index` exists in the tree of
/// `size` leaves, ordered leaf to root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub index: u64,
    pub size: u64,
    pub path: Vec<Digest>,
}

/// Path showing that the tree of `new_size` leaves is an append-only
/// extension of the tree of `old_size` leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub path: Vec<Digest>,
}

fn encode_path(mut enc: Encoder, path: &[Digest]) -> Encoder {
    enc = enc.list_len(path.len());
    for d in path {
        enc = enc.digest(d);
    }
    enc
}

fn decode_path(dec: &mut Decoder<'_>) -> Result<Vec<Digest>, CodecError> {
    let n = dec.list_len()?;
    // Each path element costs at least 36 encoded bytes; an honest count
    // can never exceed what the buffer still holds.
    if n > dec.remaining() / 36 + 1 {
        return Err(CodecError::Invalid(format!("path length {n} implausible")));
    }
    let mut path = Vec::with_capacity(n);
    for _ in 0..n {
        path.push(dec.digest()?);
    }
    Ok(path)
}

impl InclusionProof {
    pub fn canonical_bytes(&self) -> CanonicalBytes {
        encode_path(Encoder::new().u64(self.index).u64(self.size), &self.path).finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let proof = InclusionProof {
            index: dec.u64()?,
            size: dec.u64()?,
            path: decode_path(&mut dec)?,
        };
        dec.finish()?;
        Ok(proof)
    }
}

impl ConsistencyProof {
    pub fn canonical_bytes(&self) -> CanonicalBytes {
        encode_path(
            Encoder::new().u64(self.old_size).u64(self.new_size),
            &self.path,
        )
        .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let proof = ConsistencyProof {
            old_size: dec.u64()?,
            new_size: dec.u64()?,
            path: decode_path(&mut dec)?,
        };
        dec.finish()?;
        Ok(proof)
    }
}

/// A log-signed (size, root, timestamp) snapshot of the tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTreeHead {
    pub size: u64,
    pub root: Digest,
    pub timestamp: u64,
    pub log_key: VerifyingKey,
    pub sig: Signature,
}

impl SignedTreeHead {
    pub fn signing_digest(size: u64, root: &Digest, timestamp: u64) -> Digest {
        hash_tagged(
            DomainTag::TreeHead,
            [
                size.to_be_bytes().as_slice(),
                root.as_bytes().as_slice(),
                timestamp.to_be_bytes().as_slice(),
            ],
        )
    }

    pub fn create(key: &KeyPair, size: u64, root: Digest, timestamp: u64) -> Self {
        let payload = Self::signing_digest(size, &root, timestamp);
        SignedTreeHead {
            size,
            root,
            timestamp,
            log_key: key.verifying_key(),
            sig: crypto::sign(key, &CanonicalBytes::from(&payload)),
        }
    }

    /// True when the signature verifies under the key embedded in the head.
    pub fn sig_valid(&self) -> bool {
        let payload = Self::signing_digest(self.size, &self.root, self.timestamp);
        crypto::verify(&self.log_key, &CanonicalBytes::from(&payload), &self.sig)
    }

    /// True when the head names `key` as the log key and the signature
    /// verifies under it.
    pub fn verify_under(&self, key: &VerifyingKey) -> bool {
        self.log_key == *key && self.sig_valid()
    }

    pub fn canonical_bytes(&self) -> CanonicalBytes {
        Encoder::new()
            .u64(self.size)
            .digest(&self.root)
            .u64(self.timestamp)
            .bytes(self.log_key.as_bytes())
            .bytes(self.sig.as_bytes())
            .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let size = dec.u64()?;
        let root = dec.digest()?;
        let timestamp = dec.u64()?;
        let key: [u8; 32] = dec
            .opt_fixed::<32>()?
            .ok_or_else(|| CodecError::Invalid("missing log key".into()))?;
        let sig: [u8; 64] = dec
            .opt_fixed::<64>()?
            .ok_or_else(|| CodecError::Invalid("missing signature".into()))?;
        dec.finish()?;
        Ok(SignedTreeHead {
            size,
            root,
            timestamp,
            log_key: VerifyingKey::from_bytes(key),
            sig: Signature::from_bytes(sig),
        })
    }
}

// ---------------------------------------------------------------------------
// Tree state
// ---------------------------------------------------------------------------

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    hash_tagged(DomainTag::Node, [left.as_bytes(), right.as_bytes()])
}

/// Largest power of two strictly below n; n must be at least 2.
fn split_point(n: usize) -> usize {
    debug_assert!(n >= 2);
    1 << (usize::BITS - 1 - (n - 1).leading_zeros())
}

fn range_root(leaves: &[Digest]) -> Digest {
    match leaves.len() {
        0 => hash(b""),
        1 => leaves[0],
        n => {
            let k = split_point(n);
            node_hash(&range_root(&leaves[..k]), &range_root(&leaves[k..]))
        }
    }
}

fn inclusion_path(leaves: &[Digest], index: usize, path: &mut Vec<Digest>) {
    if leaves.len() <= 1 {
        return;
    }
    let k = split_point(leaves.len());
    if index < k {
        inclusion_path(&leaves[..k], index, path);
        path.push(range_root(&leaves[k..]));
    } else {
        inclusion_path(&leaves[k..], index - k, path);
        path.push(range_root(&leaves[..k]));
    }
}

fn consistency_subproof(leaves: &[Digest], m: usize, from_old_root: bool, path: &mut Vec<Digest>) {
    let n = leaves.len();
    if m == n {
        if !from_old_root {
            path.push(range_root(leaves));
        }
        return;
    }
    let k = split_point(n);
    if m <= k {
        consistency_subproof(&leaves[..k], m, from_old_root, path);
        path.push(range_root(&leaves[k..]));
    } else {
        consistency_subproof(&leaves[k..], m - k, false, path);
        path.push(range_root(&leaves[..k]));
    }
}

/// The log's tree: an ordered, append-only list of leaf digests. Leaves are
/// only ever added at the end; nothing mutates an existing leaf.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TreeState {
    leaves: Vec<Digest>,
}

impl TreeState {
    pub fn new() -> Self {
        TreeState::default()
    }

    /// Build a tree over an explicit leaf set. Used by verifiers and test
    /// oracles to materialize alternative trees; a live log only appends.
    pub fn from_leaves(leaves: Vec<Digest>) -> Self {
        TreeState { leaves }
    }

    pub fn size(&self) -> u64 {
        self.leaves.len() as u64
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.leaves
    }

    /// Validate an entry and append its leaf. Returns the new leaf's index.
    pub fn append(&mut self, entry: &LogEntry) -> Result<u64, EntryError> {
        entry.validate()?;
        Ok(self.append_leaf(entry_leaf_hash(entry)))
    }

    pub fn append_leaf(&mut self, leaf: Digest) -> u64 {
        self.leaves.push(leaf);
        self.leaves.len() as u64 - 1
    }

    pub fn root(&self) -> Digest {
        range_root(&self.leaves)
    }

    /// Root of the historical tree over the first `size` leaves.
    pub fn root_at(&self, size: u64) -> Result<Digest, MerkleError> {
        if size > self.size() {
            return Err(MerkleError::SizeOutOfRange {
                requested: size,
                size: self.size(),
            });
        }
        Ok(range_root(&self.leaves[..size as usize]))
    }

    pub fn prove_inclusion(&self, index: u64) -> Result<InclusionProof, MerkleError> {
        self.prove_inclusion_at(index, self.size())
    }

    /// Inclusion proof for `index` within the historical tree of `size`
    /// leaves.
    pub fn prove_inclusion_at(&self, index: u64, size: u64) -> Result<InclusionProof, MerkleError> {
        if size > self.size() {
            return Err(MerkleError::SizeOutOfRange {
                requested: size,
                size: self.size(),
            });
        }
        if index >= size {
            return Err(MerkleError::IndexOutOfRange { index, size });
        }
        let mut path = Vec::new();
        inclusion_path(&self.leaves[..size as usize], index as usize, &mut path);
        Ok(InclusionProof { index, size, path })
    }

    pub fn prove_consistency(&self, old_size: u64) -> Result<ConsistencyProof, MerkleError> {
        self.prove_consistency_at(old_size, self.size())
    }

    /// Consistency proof from the tree at `old_size` to the tree at
    /// `new_size`, both of which must be historical sizes of this log.
    pub fn prove_consistency_at(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, MerkleError> {
        if new_size > self.size() {
            return Err(MerkleError::SizeOutOfRange {
                requested: new_size,
                size: self.size(),
            });
        }
        if old_size == 0 || old_size > new_size {
            return Err(MerkleError::SizeOutOfRange {
                requested: old_size,
                size: new_size,
            });
        }
        let mut path = Vec::new();
        if old_size < new_size {
            consistency_subproof(
                &self.leaves[..new_size as usize],
                old_size as usize,
                true,
                &mut path,
            );
        }
        Ok(ConsistencyProof {
            old_size,
            new_size,
            path,
        })
    }
}

// ---------------------------------------------------------------------------
// Proof verification
// ---------------------------------------------------------------------------

/// Check that `leaf` sits at `proof.index` in the tree of `proof.size`
/// leaves whose root is `root`.
pub fn verify_inclusion(leaf: &Digest, proof: &InclusionProof, root: &Digest) -> bool {
    if proof.index >= proof.size {
        return false;
    }
    let mut fnode = proof.index;
    let mut snode = proof.size - 1;
    let mut acc = *leaf;
    for p in &proof.path {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            acc = node_hash(p, &acc);
            if fnode & 1 == 0 {
                while fnode & 1 == 0 && fnode != 0 {
                    fnode >>= 1;
                    snode >>= 1;
                }
            }
        } else {
            acc = node_hash(&acc, p);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && acc == *root
}

/// Check that the tree with `new_root` extends the tree with `old_root`.
pub fn verify_consistency(
    old_root: &Digest,
    new_root: &Digest,
    proof: &ConsistencyProof,
) -> bool {
    let (m, n) = (proof.old_size, proof.new_size);
    if m == 0 || m > n {
        return false;
    }
    if m == n {
        return proof.path.is_empty() && old_root == new_root;
    }
    let mut path = proof.path.iter();
    let (mut old_acc, mut new_acc) = if m.is_power_of_two() {
        (*old_root, *old_root)
    } else {
        match path.next() {
            Some(first) => (*first, *first),
            None => return false,
        }
    };
    let mut fnode = m - 1;
    let mut snode = n - 1;
    while fnode & 1 == 1 {
        fnode >>= 1;
        snode >>= 1;
    }
    for c in path {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            old_acc = node_hash(c, &old_acc);
            new_acc = node_hash(c, &new_acc);
            if fnode & 1 == 0 {
                while fnode & 1 == 0 && fnode != 0 {
                    fnode >>= 1;
                    snode >>= 1;
                }
            }
        } else {
            new_acc = node_hash(&new_acc, c);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && old_acc == *old_root && new_acc == *new_root
}
