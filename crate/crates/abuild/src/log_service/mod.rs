//! Persistent transparency-log service: append-only storage, a
//! line-oriented JSON wire protocol over TCP, and a witness client for
//! split-view detection.

mod client;
mod server;
mod storage;
mod wire;
mod witness;

pub use client::LogClient;
pub use server::{serve, LogServiceConfig, RunningService};
pub use storage::{replay_entries, StorageFile};
pub use wire::{
    parse_request, AppendResponse, ConsistencyResponse, EntryResponse, ErrorResponse,
    InclusionResponse, Request, SthResponse,
};
pub use witness::{Observation, WitnessError, WitnessState};

use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::codec;
use crate::crypto::{KeyPair, VerifyingKey};
use crate::merkle::{
    ConsistencyProof, EntryError, InclusionProof, LogEntry, MerkleError, SignedTreeHead, TreeState,
};

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Entry(#[from] EntryError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("storage corrupt at offset {offset}: {reason}")]
    CorruptStorage { offset: usize, reason: String },
    #[error("log returned error {code}: {msg}")]
    Remote { code: String, msg: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LogError {
    /// Stable error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            LogError::Entry(_) => "invalid_entry",
            LogError::Merkle(_) => "out_of_range",
            LogError::CorruptStorage { .. } => "corrupt_storage",
            LogError::Remote { .. } => "remote",
            LogError::Protocol(_) => "protocol",
            LogError::Io(_) => "internal",
        }
    }
}

// ---------------------------------------------------------------------------
// Core service
// ---------------------------------------------------------------------------

/// The log proper: entries, their Merkle tree, and the signing key. Appends
/// are durable before they are acknowledged; a restart from storage always
/// reproduces the last acknowledged root.
pub struct LogService {
    tree: TreeState,
    entries: Vec<LogEntry>,
    storage: Option<StorageFile>,
    key: KeyPair,
}

impl LogService {
    /// Open (or create) a log backed by an append-only storage file.
    pub fn open(path: &Path, key: KeyPair) -> Result<Self, LogError> {
        let (storage, entries) = StorageFile::open(path)?;
        let mut tree = TreeState::new();
        for entry in &entries {
            entry.validate()?;
            tree.append(entry)?;
        }
        Ok(LogService {
            tree,
            entries,
            storage: Some(storage),
            key,
        })
    }

    /// An in-memory log without persistence, for tests and scenario runs.
    pub fn ephemeral(key: KeyPair) -> Self {
        LogService {
            tree: TreeState::new(),
            entries: Vec::new(),
            storage: None,
            key,
        }
    }

    pub fn size(&self) -> u64 {
        self.tree.size()
    }

    pub fn log_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn tree(&self) -> &TreeState {
        &self.tree
    }

    /// Validate, persist, then incorporate an entry. The entry hits disk
    /// (flushed and synced) before the tree advances, so an acknowledged
    /// index is always recoverable.
    pub fn append(&mut self, entry: LogEntry) -> Result<(u64, SignedTreeHead), LogError> {
        entry.validate()?;
        if let Some(storage) = &mut self.storage {
            storage.append(&entry)?;
        }
        let index = self.tree.append(&entry)?;
        self.entries.push(entry);
        Ok((index, self.latest_sth()))
    }

    pub fn latest_sth(&self) -> SignedTreeHead {
        SignedTreeHead::create(&self.key, self.tree.size(), self.tree.root(), codec::unix_now())
    }

    pub fn inclusion_proof(&self, index: u64, size: u64) -> Result<InclusionProof, LogError> {
        Ok(self.tree.prove_inclusion_at(index, size)?)
    }

    pub fn consistency_proof(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, LogError> {
        Ok(self.tree.prove_consistency_at(old_size, new_size)?)
    }

    pub fn entry(&self, index: u64) -> Result<LogEntry, LogError> {
        self.entries
            .get(index as usize)
            .cloned()
            .ok_or(LogError::Merkle(MerkleError::IndexOutOfRange {
                index,
                size: self.size(),
            }))
    }
}

// ---------------------------------------------------------------------------
// Access interface
// ---------------------------------------------------------------------------

/// Uniform access to a log, whether in-process or across the wire. The
/// pipeline appends through it; verifiers only read.
pub trait LogApi {
    fn append(&self, entry: LogEntry) -> Result<(u64, SignedTreeHead), LogError>;
    fn latest_sth(&self) -> Result<SignedTreeHead, LogError>;
    fn inclusion_proof(&self, index: u64, size: u64) -> Result<InclusionProof, LogError>;
    fn consistency_proof(&self, old_size: u64, new_size: u64)
        -> Result<ConsistencyProof, LogError>;
    fn entry(&self, index: u64) -> Result<LogEntry, LogError>;
}

/// Shared in-process handle; appends serialize through the mutex while
/// reads see immutable prefixes.
#[derive(Clone)]
pub struct SharedLog(Arc<Mutex<LogService>>);

impl SharedLog {
    pub fn new(service: LogService) -> Self {
        SharedLog(Arc::new(Mutex::new(service)))
    }

    pub fn lock(&self) -> MutexGuard<'_, LogService> {
        self.0.lock().expect("log mutex poisoned")
    }
}

impl LogApi for SharedLog {
    fn append(&self, entry: LogEntry) -> Result<(u64, SignedTreeHead), LogError> {
        self.lock().append(entry)
    }

    fn latest_sth(&self) -> Result<SignedTreeHead, LogError> {
        Ok(self.lock().latest_sth())
    }

    fn inclusion_proof(&self, index: u64, size: u64) -> Result<InclusionProof, LogError> {
        self.lock().inclusion_proof(index, size)
    }

    fn consistency_proof(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, LogError> {
        self.lock().consistency_proof(old_size, new_size)
    }

    fn entry(&self, index: u64) -> Result<LogEntry, LogError> {
        self.lock().entry(index)
    }
}
