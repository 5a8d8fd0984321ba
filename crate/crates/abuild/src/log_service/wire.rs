//! The wire protocol: newline-delimited JSON, one request per line, one
//! response line back. Digests and keys are hex, signatures and entry
//! bodies base64. Field names are pinned by the reference vectors under
//! `tests/vectors/`.

use serde::{Deserialize, Serialize};

use super::{LogError, SharedLog};
use crate::merkle::{ConsistencyProof, InclusionProof, LogEntry, SignedTreeHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Append { entry: LogEntry },
    GetSth,
    GetInclusion { index: u64, size: u64 },
    GetConsistency { old_size: u64, new_size: u64 },
    GetEntry { index: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AppendResponse {
    pub ok: bool,
    pub index: u64,
    pub sth: SignedTreeHead,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SthResponse {
    pub ok: bool,
    pub sth: SignedTreeHead,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InclusionResponse {
    pub ok: bool,
    pub proof: InclusionProof,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConsistencyResponse {
    pub ok: bool,
    pub proof: ConsistencyProof,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntryResponse {
    pub ok: bool,
    pub entry: LogEntry,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub ok: bool,
    pub code: String,
    pub msg: String,
}

pub fn parse_request(line: &str) -> Result<Request, serde_json::Error> {
    serde_json::from_str(line)
}

fn error_line(code: &str, msg: String) -> String {
    serde_json::to_string(&ErrorResponse {
        ok: false,
        code: code.to_string(),
        msg,
    })
    .expect("error response serializes")
}

fn ok_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("response serializes")
}

/// Execute one parsed request against the shared log and render the
/// response line (without the trailing newline).
pub fn handle_request(log: &SharedLog, request: Request) -> String {
    let result: Result<String, LogError> = (|| {
        Ok(match request {
            Request::Append { entry } => {
                let (index, sth) = log.lock().append(entry)?;
                ok_line(&AppendResponse {
                    ok: true,
                    index,
                    sth,
                })
            }
            Request::GetSth => ok_line(&SthResponse {
                ok: true,
                sth: log.lock().latest_sth(),
            }),
            Request::GetInclusion { index, size } => ok_line(&InclusionResponse {
                ok: true,
                proof: log.lock().inclusion_proof(index, size)?,
            }),
            Request::GetConsistency { old_size, new_size } => ok_line(&ConsistencyResponse {
                ok: true,
                proof: log.lock().consistency_proof(old_size, new_size)?,
            }),
            Request::GetEntry { index } => ok_line(&EntryResponse {
                ok: true,
                entry: log.lock().entry(index)?,
            }),
        })
    })();
    match result {
        Ok(line) => line,
        Err(e) => error_line(e.code(), e.to_string()),
    }
}

/// Render the response for an unparseable request line.
pub fn malformed_request_line(err: &serde_json::Error) -> String {
    error_line("malformed_request", err.to_string())
}
