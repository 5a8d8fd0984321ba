//! Enclave image measurements (PCR0-2) and the repository snapshot hash.
//!
//! The snapshot hash CT binds the full file tree and the complete commit
//! chain, so history swaps are as visible as content changes. Measurements
//! are pure functions of their inputs: the same image or snapshot always
//! measures identically, on any machine.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::crypto::{
    self, hash_tagged, CanonicalBytes, Decoder, Digest, DomainTag, Encoder, KeyPair, Signature,
    VerifyingKey,
};

/// Name of the commit-chain file at the root of a snapshot directory. It is
/// repository metadata, not content, and is excluded from the file tree.
pub const COMMITS_FILE: &str = "commits.jsonl";

/// Special file names inside an image directory holding the kernel and
/// application blobs.
pub const KERNEL_BLOB_FILE: &str = "kernel.blob";
pub const APP_BLOB_FILE: &str = "app.blob";

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("invalid path {path:?}: {reason}")]
    InvalidPath { path: String, reason: &'static str },
    #[error("duplicate path {0:?}")]
    DuplicatePath(String),
    #[error("paths not sorted: {0:?} after {1:?}")]
    UnsortedPaths(String, String),
    #[error("snapshot has an empty commit list")]
    EmptyCommitList,
    #[error("missing {COMMITS_FILE} in snapshot directory")]
    MissingCommitsFile,
    #[error("bad commit record on line {line}: {source}")]
    BadCommitLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> MeasurementError {
    MeasurementError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// File trees
// ---------------------------------------------------------------------------

/// One file inside an image or snapshot: relative path plus raw content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub content: Vec<u8>,
}

impl FileEntry {
    pub fn new(path: impl Into<String>, content: impl Into<Vec<u8>>) -> Self {
        FileEntry {
            path: path.into(),
            content: content.into(),
        }
    }

    /// Per-file digest used by both snapshot hashing and tree hashing.
    pub fn digest(&self) -> Digest {
        hash_tagged(DomainTag::Leaf, [self.path.as_bytes(), &self.content])
    }
}

/// Reject unsafe relative paths: absolute paths, traversal components, and
/// control bytes that could escape a materialized workspace.
pub fn check_path(path: &str) -> Result<(), MeasurementError> {
    let invalid = |reason| MeasurementError::InvalidPath {
        path: path.to_string(),
        reason,
    };
    if path.is_empty() {
        return Err(invalid("empty"));
    }
    if path.starts_with('/') {
        return Err(invalid("absolute"));
    }
    if path.contains('\0') {
        return Err(invalid("contains NUL"));
    }
    if path.contains('\\') {
        return Err(invalid("contains backslash"));
    }
    for component in path.split('/') {
        if component.is_empty() || component == "." || component == ".." {
            return Err(invalid("has empty, '.' or '..' component"));
        }
    }
    Ok(())
}

/// Validate that paths are safe, unique, and sorted lexicographically by
/// byte value.
pub fn check_file_list(files: &[FileEntry]) -> Result<(), MeasurementError> {
    for pair in files.windows(2) {
        if pair[1].path == pair[0].path {
            return Err(MeasurementError::DuplicatePath(pair[0].path.clone()));
        }
        if pair[1].path.as_bytes() < pair[0].path.as_bytes() {
            return Err(MeasurementError::UnsortedPaths(
                pair[1].path.clone(),
                pair[0].path.clone(),
            ));
        }
    }
    for f in files {
        check_path(&f.path)?;
    }
    Ok(())
}

fn sort_and_check(mut files: Vec<FileEntry>) -> Result<Vec<FileEntry>, MeasurementError> {
    files.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
    check_file_list(&files)?;
    Ok(files)
}

// ---------------------------------------------------------------------------
// Enclave image and PCRs
// ---------------------------------------------------------------------------

/// The bootable build-environment image: support files plus the kernel and
/// application blobs. Stands in for a real enclave image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveImage {
    pub name: String,
    files: Vec<FileEntry>,
    pub kernel_blob: Vec<u8>,
    pub app_blob: Vec<u8>,
}

impl EnclaveImage {
    pub fn new(
        name: impl Into<String>,
        files: Vec<FileEntry>,
        kernel_blob: Vec<u8>,
        app_blob: Vec<u8>,
    ) -> Result<Self, MeasurementError> {
        Ok(EnclaveImage {
            name: name.into(),
            files: sort_and_check(files)?,
            kernel_blob,
            app_blob,
        })
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

/// The measurement registers: pcr0 covers the whole image, pcr1 the kernel
/// blob, pcr2 the application blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcrSet {
    pub pcr0: Digest,
    pub pcr1: Digest,
    pub pcr2: Digest,
}

/// Measure an image into its PCR set. Deterministic in the image alone.
pub fn measure_image(image: &EnclaveImage) -> Result<PcrSet, MeasurementError> {
    check_file_list(&image.files)?;
    let mut parts: Vec<&[u8]> = Vec::with_capacity(image.files.len() * 2 + 2);
    for f in &image.files {
        parts.push(f.path.as_bytes());
        parts.push(&f.content);
    }
    parts.push(&image.kernel_blob);
    parts.push(&image.app_blob);
    Ok(PcrSet {
        pcr0: hash_tagged(DomainTag::Snapshot, parts),
        pcr1: hash_tagged(DomainTag::Snapshot, [&image.kernel_blob]),
        pcr2: hash_tagged(DomainTag::Snapshot, [&image.app_blob]),
    })
}

// ---------------------------------------------------------------------------
// Commits and snapshots
// ---------------------------------------------------------------------------

/// One entry of the commit chain. `parent` is the zero digest for the root
/// commit. When `author_sig` is present it must verify under `author_key`
/// over the canonical encoding of (parent, message, tree_hash).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub parent: Digest,
    pub message: String,
    pub author_key: Option<VerifyingKey>,
    pub author_sig: Option<Signature>,
    pub tree_hash: Digest,
}

impl CommitRecord {
    pub fn unsigned(parent: Digest, message: impl Into<String>, tree_hash: Digest) -> Self {
        CommitRecord {
            parent,
            message: message.into(),
            author_key: None,
            author_sig: None,
            tree_hash,
        }
    }

    pub fn signed(
        parent: Digest,
        message: impl Into<String>,
        tree_hash: Digest,
        author: &KeyPair,
    ) -> Self {
        let message = message.into();
        let payload = Self::signing_payload(&parent, &message, &tree_hash);
        CommitRecord {
            parent,
            author_key: Some(author.verifying_key()),
            author_sig: Some(crypto::sign(author, &payload)),
            message,
            tree_hash,
        }
    }

    pub fn signing_payload(parent: &Digest, message: &str, tree_hash: &Digest) -> CanonicalBytes {
        Encoder::new()
            .digest(parent)
            .str(message)
            .digest(tree_hash)
            .finish()
    }

    /// None for unsigned commits, otherwise whether the signature verifies.
    /// A signature without a key counts as failed.
    pub fn author_sig_valid(&self) -> Option<bool> {
        match (&self.author_key, &self.author_sig) {
            (None, None) => None,
            (Some(key), Some(sig)) => {
                let payload = Self::signing_payload(&self.parent, &self.message, &self.tree_hash);
                Some(crypto::verify(key, &payload, sig))
            }
            _ => Some(false),
        }
    }

    pub fn canonical_bytes(&self) -> CanonicalBytes {
        Encoder::new()
            .digest(&self.parent)
            .str(&self.message)
            .opt_bytes(self.author_key.as_ref().map(|k| k.as_bytes().as_slice()))
            .opt_bytes(self.author_sig.as_ref().map(|s| s.as_bytes().as_slice()))
            .digest(&self.tree_hash)
            .finish()
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let record = Self::decode_fields(&mut dec)?;
        dec.finish()?;
        Ok(record)
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(CommitRecord {
            parent: dec.digest()?,
            message: dec.str()?,
            author_key: dec.opt_fixed::<32>()?.map(VerifyingKey::from_bytes),
            author_sig: dec.opt_fixed::<64>()?.map(Signature::from_bytes),
            tree_hash: dec.digest()?,
        })
    }
}

/// The exact source state a build ingests: file tree plus commit chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    files: Vec<FileEntry>,
    pub commits: Vec<CommitRecord>,
}

impl RepoSnapshot {
    pub fn new(
        files: Vec<FileEntry>,
        commits: Vec<CommitRecord>,
    ) -> Result<Self, MeasurementError> {
        Ok(RepoSnapshot {
            files: sort_and_check(files)?,
            commits,
        })
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

/// Hash of a file tree alone, used as the `tree_hash` of commits.
pub fn file_tree_hash(files: &[FileEntry]) -> Digest {
    let digests: Vec<[u8; 32]> = files.iter().map(|f| *f.digest().as_bytes()).collect();
    hash_tagged(DomainTag::Snapshot, digests)
}

/// Compute the snapshot hash CT over the file tree and the full commit
/// chain. Any change to a file byte, a path, a commit message, or a commit
/// signature changes CT.
pub fn snapshot_hash(snapshot: &RepoSnapshot) -> Result<Digest, MeasurementError> {
    check_file_list(&snapshot.files)?;
    if snapshot.commits.is_empty() {
        return Err(MeasurementError::EmptyCommitList);
    }
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(snapshot.files.len() + snapshot.commits.len());
    for f in &snapshot.files {
        parts.push(f.digest().as_bytes().to_vec());
    }
    for c in &snapshot.commits {
        parts.push(c.canonical_bytes().as_bytes().to_vec());
    }
    Ok(hash_tagged(DomainTag::Snapshot, parts))
}

/// Hash of a built artifact: plain SHA-256 of its bytes.
pub fn artifact_hash(artifact: &[u8]) -> Digest {
    crypto::hash(artifact)
}

// ---------------------------------------------------------------------------
// commits.jsonl
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CommitLine {
    parent: String,
    message: String,
    #[serde(default)]
    author_key: Option<String>,
    #[serde(default)]
    author_sig: Option<String>,
    tree_hash: String,
}

/// Parse a commit chain from its line-oriented JSON form. All byte fields
/// are hex-encoded; blank lines are ignored.
pub fn parse_commits_jsonl(text: &str) -> Result<Vec<CommitRecord>, MeasurementError> {
    let mut commits = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CommitLine = serde_json::from_str(line)
            .map_err(|source| MeasurementError::BadCommitLine { line: i + 1, source })?;
        commits.push(CommitRecord {
            parent: Digest::from_hex(&parsed.parent)?,
            message: parsed.message,
            author_key: parsed
                .author_key
                .as_deref()
                .map(VerifyingKey::from_hex)
                .transpose()?,
            author_sig: parsed
                .author_sig
                .as_deref()
                .map(Signature::from_hex)
                .transpose()?,
            tree_hash: Digest::from_hex(&parsed.tree_hash)?,
        });
    }
    Ok(commits)
}

pub fn render_commits_jsonl(commits: &[CommitRecord]) -> String {
    let mut out = String::new();
    for c in commits {
        let line = CommitLine {
            parent: c.parent.to_hex(),
            message: c.message.clone(),
            author_key: c.author_key.as_ref().map(|k| k.to_hex()),
            author_sig: c.author_sig.as_ref().map(|s| s.to_hex()),
            tree_hash: c.tree_hash.to_hex(),
        };
        out.push_str(&serde_json::to_string(&line).expect("commit line serializes"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Directory loading
// ---------------------------------------------------------------------------

fn walk_files(root: &Path) -> Result<Vec<FileEntry>, MeasurementError> {
    fn recurse(
        root: &Path,
        dir: &Path,
        out: &mut Vec<FileEntry>,
    ) -> Result<(), MeasurementError> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let meta = fs::symlink_metadata(&path).map_err(|e| io_err(&path, e))?;
            if meta.file_type().is_symlink() {
                return Err(MeasurementError::InvalidPath {
                    path: path.display().to_string(),
                    reason: "symlinks are not part of a snapshot",
                });
            }
            if meta.is_dir() {
                recurse(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path is under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                let content = fs::read(&path).map_err(|e| io_err(&path, e))?;
                out.push(FileEntry::new(rel, content));
            }
        }
        Ok(())
    }

    let mut out = Vec::new();
    recurse(root, root, &mut out)?;
    Ok(out)
}

/// Load a snapshot from a directory tree. `commits.jsonl` at the root holds
/// the commit chain and is excluded from the file tree.
pub fn load_snapshot(dir: &Path) -> Result<RepoSnapshot, MeasurementError> {
    let mut files = walk_files(dir)?;
    let commits_pos = files
        .iter()
        .position(|f| f.path == COMMITS_FILE)
        .ok_or(MeasurementError::MissingCommitsFile)?;
    let commits_file = files.remove(commits_pos);
    let text = String::from_utf8_lossy(&commits_file.content).into_owned();
    let commits = parse_commits_jsonl(&text)?;
    if commits.is_empty() {
        return Err(MeasurementError::EmptyCommitList);
    }
    RepoSnapshot::new(files, commits)
}

/// Load an enclave image from a directory. `kernel.blob` and `app.blob` at
/// the root become the kernel and application blobs; everything else is a
/// support file. Missing blobs measure as empty.
pub fn load_image(dir: &Path) -> Result<EnclaveImage, MeasurementError> {
    let mut files = walk_files(dir)?;
    let mut take = |name: &str| -> Vec<u8> {
        match files.iter().position(|f| f.path == name) {
            Some(i) => files.remove(i).content,
            None => Vec::new(),
        }
    };
    let kernel_blob = take(KERNEL_BLOB_FILE);
    let app_blob = take(APP_BLOB_FILE);
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    EnclaveImage::new(name, files, kernel_blob, app_blob)
}
