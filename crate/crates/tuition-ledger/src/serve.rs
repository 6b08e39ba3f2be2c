//! Newline-framed wire service over a local Unix socket.
//!
//! One line in, one line out, exactly the in-process dispatch semantics, so
//! an external bank simulator can drive the engine out-of-process.
//! Connections are served one at a time in arrival order; the engine itself
//! is the single serialization point for mutations.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::Path;

use thiserror::Error;

use tuition_core::engine::dispatch_line;

use crate::durable::DurableStore;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Bind the socket and serve. `max_connections` bounds the accept loop
/// (used by tests and scripted runs); `None` serves forever.
pub fn serve(
    store: &mut DurableStore,
    socket_path: &Path,
    max_connections: Option<u64>,
) -> Result<(), ServeError> {
    if socket_path.exists() {
        std::fs::remove_file(socket_path)?;
    }
    let listener = UnixListener::bind(socket_path)?;
    let mut served = 0u64;
    loop {
        if let Some(max) = max_connections {
            if served >= max {
                return Ok(());
            }
        }
        let (stream, _) = listener.accept()?;
        served += 1;
        if let Err(e) = serve_connection(store, stream) {
            // A broken client connection must not take the service down.
            eprintln!("connection error: {e}");
        }
    }
}

fn serve_connection(store: &mut DurableStore, stream: UnixStream) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        let response = dispatch_line(store.engine_mut(), &line);
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Socket-backed transport for the simulator: the counterpart of the
/// in-process `EngineTransport`, speaking the same one-line exchange.
pub struct SocketTransport {
    writer: UnixStream,
    reader: BufReader<UnixStream>,
}

impl SocketTransport {
    pub fn connect(socket_path: &Path) -> std::io::Result<SocketTransport> {
        let stream = UnixStream::connect(socket_path)?;
        let writer = stream.try_clone()?;
        Ok(SocketTransport {
            writer,
            reader: BufReader::new(stream),
        })
    }
}

impl tuition_core::sim::UpsTransport for SocketTransport {
    fn exchange(&mut self, line: &str) -> Result<String, tuition_core::sim::TransportError> {
        let io = |e: std::io::Error| tuition_core::sim::TransportError(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)?;
        let mut response = String::new();
        let n = self.reader.read_line(&mut response).map_err(io)?;
        if n == 0 {
            return Err(tuition_core::sim::TransportError(String::from(
                "server closed the connection",
            )));
        }
        Ok(response.trim_end_matches(['\r', '\n']).to_string())
    }
}
