//! Append-only storage: length-prefixed canonical entry records in a single
//! file. The tree is rebuilt in memory at startup by replaying the file.

use std::fs::{File, OpenOptions};
use std::io::{Read as _, Seek as _, SeekFrom, Write as _};
use std::path::{Path, PathBuf};

use super::LogError;
use crate::merkle::LogEntry;

/// Replay a storage image. Returns the decoded entries plus the byte length
/// of the valid prefix; a torn record at the tail (from an interrupted
/// write) is not an error and simply marks where the valid prefix ends.
/// A complete record that fails to decode is corruption and errors out.
pub fn replay_entries(bytes: &[u8]) -> Result<(Vec<LogEntry>, usize), LogError> {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    loop {
        let rest = &bytes[offset..];
        if rest.len() < 4 {
            // empty or torn length prefix
            return Ok((entries, offset));
        }
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        if rest.len() - 4 < len {
            // torn record body
            return Ok((entries, offset));
        }
        let record = &rest[4..4 + len];
        let entry = LogEntry::from_canonical(record).map_err(|e| LogError::CorruptStorage {
            offset,
            reason: e.to_string(),
        })?;
        entries.push(entry);
        offset += 4 + len;
    }
}

/// Writer over the storage file. Bytes once written are never rewritten;
/// recovery only ever truncates a torn tail back to the last record
/// boundary.
pub struct StorageFile {
    file: File,
    path: PathBuf,
}

impl StorageFile {
    pub fn open(path: &Path) -> Result<(Self, Vec<LogEntry>), LogError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (entries, valid_len) = replay_entries(&bytes)?;
        if valid_len < bytes.len() {
            file.set_len(valid_len as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            StorageFile {
                file,
                path: path.to_path_buf(),
            },
            entries,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Persist one record and sync before returning; the caller only
    /// acknowledges the append after this succeeds.
    pub fn append(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        let body = entry.canonical_bytes();
        let mut record = Vec::with_capacity(4 + body.len());
        record.extend_from_slice(&(body.len() as u32).to_be_bytes());
        record.extend_from_slice(body.as_bytes());
        self.file.write_all(&record)?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}
