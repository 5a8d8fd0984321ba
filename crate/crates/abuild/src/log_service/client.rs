//! TCP client speaking the line-oriented JSON protocol. One connection per
//! request keeps the client stateless and safe to share.

use std::io::{BufRead as _, BufReader, Write as _};
use std::net::TcpStream;
use std::time::Duration;

use serde::de::DeserializeOwned;

use super::wire::{
    AppendResponse, ConsistencyResponse, EntryResponse, ErrorResponse, InclusionResponse, Request,
    SthResponse,
};
use super::{LogApi, LogError};
use crate::merkle::{ConsistencyProof, InclusionProof, LogEntry, SignedTreeHead};

const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct LogClient {
    addr: String,
}

impl LogClient {
    pub fn new(addr: impl Into<String>) -> Self {
        LogClient { addr: addr.into() }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn roundtrip<T: DeserializeOwned>(&self, request: &Request) -> Result<T, LogError> {
        let mut stream = TcpStream::connect(&self.addr)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        let mut line = serde_json::to_string(request)
            .map_err(|e| LogError::Protocol(format!("unserializable request: {e}")))?;
        line.push('\n');
        stream.write_all(line.as_bytes())?;
        stream.flush()?;

        let mut reader = BufReader::new(stream);
        let mut response = String::new();
        reader.read_line(&mut response)?;
        if response.trim().is_empty() {
            return Err(LogError::Protocol("empty response".to_string()));
        }

        let value: serde_json::Value = serde_json::from_str(&response)
            .map_err(|e| LogError::Protocol(format!("bad response json: {e}")))?;
        if value.get("ok").and_then(|v| v.as_bool()) == Some(true) {
            serde_json::from_value(value)
                .map_err(|e| LogError::Protocol(format!("unexpected response shape: {e}")))
        } else {
            let err: ErrorResponse = serde_json::from_value(value)
                .map_err(|e| LogError::Protocol(format!("unexpected error shape: {e}")))?;
            Err(LogError::Remote {
                code: err.code,
                msg: err.msg,
            })
        }
    }
}

impl LogApi for LogClient {
    fn append(&self, entry: LogEntry) -> Result<(u64, SignedTreeHead), LogError> {
        let resp: AppendResponse = self.roundtrip(&Request::Append { entry })?;
        Ok((resp.index, resp.sth))
    }

    fn latest_sth(&self) -> Result<SignedTreeHead, LogError> {
        let resp: SthResponse = self.roundtrip(&Request::GetSth)?;
        Ok(resp.sth)
    }

    fn inclusion_proof(&self, index: u64, size: u64) -> Result<InclusionProof, LogError> {
        let resp: InclusionResponse = self.roundtrip(&Request::GetInclusion { index, size })?;
        Ok(resp.proof)
    }

    fn consistency_proof(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, LogError> {
        let resp: ConsistencyResponse =
            self.roundtrip(&Request::GetConsistency { old_size, new_size })?;
        Ok(resp.proof)
    }

    fn entry(&self, index: u64) -> Result<LogEntry, LogError> {
        let resp: EntryResponse = self.roundtrip(&Request::GetEntry { index })?;
        Ok(resp.entry)
    }
}
