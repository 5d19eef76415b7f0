//! Child-process adapter for external simulators.
//!
//! The engine talks to an external model over a newline-delimited text
//! protocol on the child's stdin/stdout (UTF-8, '.' decimal separator,
//! locale independent):
//!
//! ```text
//! request:  EVAL 1 <d> v1 v2 ... vd
//! response: OK <m> u1 ... um
//!           ERR <message>
//! ```
//!
//! Values are written in the shortest decimal form that round-trips 64-bit
//! floats exactly. One request is answered by exactly one response line; the
//! child is launched with `BBOX_PROTOCOL=1` in its environment.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

use thiserror::Error;

use crate::engine::EvalError;
use crate::surrogate::Bounds;

pub const PROTOCOL_VERSION: u32 = 1;
pub const PROTOCOL_ENV_VAR: &str = "BBOX_PROTOCOL";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cannot send non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("query point is outside the declared bounds")]
    OutOfBounds,
    #[error("query dimension {got} does not match bounds dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("simulator reported error: {0}")]
    Reported(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("expected {expected} output values, got {got}")]
    OutputDim { expected: usize, got: usize },
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("failed to launch '{command}': {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("simulator process exited")]
    ChildExited,
    #[error("i/o error talking to simulator: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ProtocolError> for EvalError {
    fn from(e: ProtocolError) -> Self {
        EvalError(e.to_string())
    }
}

/// Format one request line (without the trailing newline).
pub fn format_request(x: &[f64]) -> Result<String, ProtocolError> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ProtocolError::NonFiniteValue(i));
    }
    let mut line = format!("EVAL {PROTOCOL_VERSION} {}", x.len());
    for v in x {
        // f64 Display prints the shortest digits that round-trip exactly
        line.push(' ');
        line.push_str(&v.to_string());
    }
    Ok(line)
}

/// Parse one response line into `output_dim` values.
pub fn parse_response(line: &str, output_dim: usize) -> Result<Vec<f64>, ProtocolError> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    let mut tokens = trimmed.split_ascii_whitespace();
    match tokens.next() {
        Some("OK") => {}
        Some("ERR") => {
            let msg = trimmed.strip_prefix("ERR").unwrap_or("").trim().to_string();
            return Err(ProtocolError::Reported(msg));
        }
        _ => return Err(ProtocolError::Malformed(trimmed.to_string())),
    }
    let count: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ProtocolError::Malformed(trimmed.to_string()))?;
    if count != output_dim {
        return Err(ProtocolError::OutputDim { expected: output_dim, got: count });
    }
    let values: Result<Vec<f64>, _> = tokens.map(|t| t.parse::<f64>()).collect();
    let values = values.map_err(|_| ProtocolError::Malformed(trimmed.to_string()))?;
    if values.len() != output_dim {
        return Err(ProtocolError::OutputDim { expected: output_dim, got: values.len() });
    }
    Ok(values)
}

struct ChildHandle {
    process: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for ChildHandle {
    fn drop(&mut self) {
        let _ = self.process.kill();
        let _ = self.process.wait();
    }
}

/// Handle to an external simulator process.
pub struct ExternalBlackBox {
    command: Vec<String>,
    bounds: Bounds,
    output_dim: usize,
    timeout_ms: u64,
    child: Option<ChildHandle>,
}

impl ExternalBlackBox {
    pub fn new(
        command: Vec<String>,
        bounds: Bounds,
        output_dim: usize,
        timeout_ms: u64,
    ) -> Result<Self, ProtocolError> {
        if command.is_empty() {
            return Err(ProtocolError::Malformed("empty command".into()));
        }
        if output_dim == 0 {
            return Err(ProtocolError::OutputDim { expected: 1, got: 0 });
        }
        if timeout_ms == 0 {
            return Err(ProtocolError::Timeout(0));
        }
        Ok(ExternalBlackBox { command, bounds, output_dim, timeout_ms, child: None })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn spawn(&mut self) -> Result<(), ProtocolError> {
        let mut process = Command::new(&self.command[0])
            .args(&self.command[1..])
            .env(PROTOCOL_ENV_VAR, PROTOCOL_VERSION.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProtocolError::Spawn {
                command: self.command.join(" "),
                source,
            })?;
        let stdin = process.stdin.take().expect("stdin was piped");
        let stdout = process.stdout.take().expect("stdout was piped");
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break, // EOF: sender drops, receiver disconnects
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        self.child = Some(ChildHandle { process, stdin, lines: rx });
        Ok(())
    }

    /// One request/response exchange against the live child.
    fn exchange(&mut self, request: &str) -> Result<String, ProtocolError> {
        if self.child.is_none() {
            self.spawn()?;
        }
        let child = self.child.as_mut().expect("just spawned");
        if let Err(e) = writeln!(child.stdin, "{request}").and_then(|_| child.stdin.flush()) {
            self.child = None;
            return Err(ProtocolError::Io(e));
        }
        match child.lines.recv_timeout(Duration::from_millis(self.timeout_ms)) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                self.child = None;
                Err(ProtocolError::Io(e))
            }
            Err(RecvTimeoutError::Timeout) => {
                // the protocol stream is desynchronized now; drop the child
                self.child = None;
                Err(ProtocolError::Timeout(self.timeout_ms))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.child = None;
                Err(ProtocolError::ChildExited)
            }
        }
    }

    /// Evaluate the external model, restarting a crashed child once.
    pub fn evaluate_vector(&mut self, x: &[f64]) -> Result<Vec<f64>, ProtocolError> {
        if x.len() != self.bounds.dim() {
            return Err(ProtocolError::DimensionMismatch {
                expected: self.bounds.dim(),
                got: x.len(),
            });
        }
        if !self.bounds.contains(x) {
            return Err(ProtocolError::OutOfBounds);
        }
        let request = format_request(x)?;
        let line = match self.exchange(&request) {
            Ok(line) => line,
            Err(ProtocolError::ChildExited) | Err(ProtocolError::Io(_)) => {
                // restart once, then fail
                self.exchange(&request)?
            }
            Err(e) => return Err(e),
        };
        parse_response(&line, self.output_dim)
    }
}
