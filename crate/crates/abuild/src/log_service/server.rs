//! TCP server wrapping the core log: one thread per connection, one JSON
//! request per line. Appends serialize through the shared lock; reads run
//! against immutable prefixes.

use std::io::{BufRead as _, BufReader, Write as _};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::wire::{handle_request, malformed_request_line, parse_request};
use super::{LogError, LogService, SharedLog};
use crate::crypto::KeyPair;

#[derive(Debug)]
pub struct LogServiceConfig {
    pub listen_address: String,
    pub storage_path: PathBuf,
    pub log_key: KeyPair,
}

/// A running log service. Dropping it (or calling [`RunningService::shutdown`])
/// stops the accept loop; storage stays behind for the next start.
pub struct RunningService {
    addr: SocketAddr,
    shared: SharedLog,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl RunningService {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shared(&self) -> SharedLog {
        self.shared.clone()
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop with a throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_accepting();
        }
    }
}

fn handle_connection(stream: TcpStream, log: SharedLog) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let response = match parse_request(&line) {
            Ok(request) => handle_request(&log, request),
            Err(e) => malformed_request_line(&e),
        };
        if writer
            .write_all(response.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}

/// Start the service: open storage, bind the listener, and serve until
/// shut down. Restarting on the same storage path reproduces the same tree.
pub fn serve(config: LogServiceConfig) -> Result<RunningService, LogError> {
    let service = LogService::open(&config.storage_path, config.log_key)?;
    let shared = SharedLog::new(service);
    let listener = TcpListener::bind(&config.listen_address)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let accept_log = shared.clone();
    let accept_stop = stop.clone();
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let log = accept_log.clone();
            std::thread::spawn(move || handle_connection(stream, log));
        }
    });

    Ok(RunningService {
        addr,
        shared,
        stop,
        accept_thread: Some(accept_thread),
    })
}
