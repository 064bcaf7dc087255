//! Sessions with external forecaster processes.
//!
//! An adapter is any program that reads JSON lines on stdin and answers on
//! stdout. A session opens with a `hello` exchange, then sends `forecast`
//! requests tagged with unique ids and matches `forecast_result` replies by
//! id, so an adapter may answer pipelined requests in any order. Every wait
//! is bounded: a session call returns a forecast, times out, or reports that
//! the adapter died together with its stderr tail and exit status.
//!
//! [`LoopbackTransport`] runs the stub adapter in-process behind the same
//! codec, which lets the whole protocol be exercised without spawning
//! anything.

pub mod codec;
pub mod stub;
mod transport;

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::forecast::{ForecastError, ForecastRequest, ForecastResponse, ModelSpec};
use codec::{decode, encode, DecodeError, Message, PROTOCOL_VERSION};
pub use stub::{StubAdapter, StubMode};
pub use transport::{ExitReport, LoopbackTransport, ProcessTransport, Recv, Transport};

pub const DEFAULT_SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid adapter configuration: {0}")]
    Config(String),
    #[error("failed to spawn adapter {command:?}: {reason}")]
    Spawn { command: String, reason: String },
    #[error("adapter did not complete the handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("adapter speaks protocol {got}, expected {expected}")]
    ProtocolMismatch { expected: u32, got: u32 },
    #[error("request {id} for series {series} timed out after {after:?}")]
    RequestTimeout { id: u64, series: String, after: Duration },
    #[error("malformed adapter message {line:?}: {reason}")]
    Malformed { line: String, reason: String },
    #[error("series {series}: adapter response has the wrong shape: {detail}")]
    DimensionMismatch { series: String, detail: String },
    #[error("adapter session is dead: {diagnostics}")]
    SessionDead { diagnostics: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("adapter reported an error{}: {message}", id.map(|i| format!(" for request {i}")).unwrap_or_default())]
    Adapter { id: Option<u64>, message: String },
    #[error(transparent)]
    Request(#[from] ForecastError),
    #[error("session has been shut down")]
    Closed,
}

fn truncate(line: &str) -> String {
    const MAX: usize = 200;
    match line.char_indices().nth(MAX) {
        Some((cut, _)) => format!("{}...", &line[..cut]),
        None => line.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    /// Executable followed by its arguments.
    pub command: Vec<String>,
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
    pub max_in_flight: usize,
}

impl AdapterConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            handshake_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(60),
            max_in_flight: 1,
        }
    }

    /// The adapter settings of an `external` model spec.
    pub fn from_spec(spec: &ModelSpec) -> Option<Self> {
        match spec {
            ModelSpec::External { command, handshake_timeout_secs, request_timeout_secs, max_in_flight } => {
                Some(Self {
                    command: command.clone(),
                    handshake_timeout: Duration::from_secs_f64(handshake_timeout_secs.max(0.0)),
                    request_timeout: Duration::from_secs_f64(request_timeout_secs.max(0.0)),
                    max_in_flight: *max_in_flight,
                })
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.command.first().is_none_or(|c| c.is_empty()) {
            return Err(BridgeError::Config("command is empty".into()));
        }
        if self.handshake_timeout.is_zero() || self.request_timeout.is_zero() {
            return Err(BridgeError::Config("timeouts must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BridgeError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// A live connection to one adapter. Movable between threads, used by one at a time.
pub struct AdapterSession {
    transport: Box<dyn Transport>,
    name: String,
    request_timeout: Duration,
    max_in_flight: usize,
    next_id: u64,
    /// Ids whose caller gave up; late replies to them are dropped.
    abandoned: HashSet<u64>,
    dead: Option<String>,
    exit: Option<ExitReport>,
}

impl std::fmt::Debug for AdapterSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterSession")
            .field("name", &self.name)
            .field("next_id", &self.next_id)
            .field("dead", &self.dead)
            .field("closed", &self.exit.is_some())
            .finish()
    }
}

/// Spawns `cfg.command` and performs the handshake.
pub fn handshake(cfg: &AdapterConfig) -> Result<AdapterSession, BridgeError> {
    cfg.validate()?;
    let transport = ProcessTransport::spawn(&cfg.command)
        .map_err(|e| BridgeError::Spawn { command: cfg.command.join(" "), reason: e.to_string() })?;
    AdapterSession::connect(Box::new(transport), cfg)
}

/// A session with the in-process stub adapter.
pub fn loopback(mode: StubMode, cfg: &AdapterConfig) -> Result<AdapterSession, BridgeError> {
    AdapterSession::connect(Box::new(LoopbackTransport::new(mode)), cfg)
}

impl AdapterSession {
    /// Runs the handshake over an already connected transport.
    pub fn connect(mut transport: Box<dyn Transport>, cfg: &AdapterConfig) -> Result<Self, BridgeError> {
        if cfg.max_in_flight == 0 || cfg.request_timeout.is_zero() {
            return Err(BridgeError::Config("max_in_flight and request_timeout must be positive".into()));
        }
        let hello = encode(&Message::Hello { protocol: PROTOCOL_VERSION, name: None });
        if transport.send_line(&hello).is_err() {
            return Err(BridgeError::SessionDead { diagnostics: transport.diagnostics() });
        }
        let deadline = Instant::now() + cfg.handshake_timeout;
        let outcome = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break Err(BridgeError::HandshakeTimeout(cfg.handshake_timeout));
            }
            match transport.recv_line(left) {
                Recv::Timeout => {}
                Recv::Closed => break Err(BridgeError::SessionDead { diagnostics: transport.diagnostics() }),
                Recv::Line(line) if line.trim().is_empty() => {}
                Recv::Line(line) => match decode(&line) {
                    Ok(Message::Hello { protocol, name }) if protocol == PROTOCOL_VERSION => {
                        break Ok(name.unwrap_or_default());
                    }
                    Ok(Message::Hello { protocol, .. }) => {
                        break Err(BridgeError::ProtocolMismatch { expected: PROTOCOL_VERSION, got: protocol });
                    }
                    Ok(Message::Error { id, message }) => break Err(BridgeError::Adapter { id, message }),
                    Ok(other) => break Err(BridgeError::Protocol(format!("expected hello, got {}", other.kind()))),
                    Err(e) => break Err(decode_error(&line, e)),
                },
            }
        };
        match outcome {
            Ok(name) => Ok(Self {
                transport,
                name,
                request_timeout: cfg.request_timeout,
                max_in_flight: cfg.max_in_flight,
                next_id: 1,
                abandoned: HashSet::new(),
                dead: None,
                exit: None,
            }),
            Err(e) => {
                transport.terminate(Duration::from_millis(100));
                Err(e)
            }
        }
    }

    /// Name the adapter announced in its hello.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_alive(&self) -> bool {
        self.dead.is_none() && self.exit.is_none()
    }

    pub fn forecast_remote(&mut self, req: &ForecastRequest) -> Result<ForecastResponse, BridgeError> {
        let mut out = self.forecast_batch(std::slice::from_ref(req))?;
        Ok(out.pop().expect("one response per request"))
    }

    /// Forecasts every request, keeping up to `max_in_flight` outstanding.
    ///
    /// Responses come back in request order. The first failure aborts the
    /// batch; requests still outstanding are abandoned and any late replies
    /// to them are discarded.
    pub fn forecast_batch(&mut self, reqs: &[ForecastRequest]) -> Result<Vec<ForecastResponse>, BridgeError> {
        if self.exit.is_some() {
            return Err(BridgeError::Closed);
        }
        if let Some(d) = &self.dead {
            return Err(BridgeError::SessionDead { diagnostics: d.clone() });
        }
        for r in reqs {
            r.validate()?;
        }
        let mut results: Vec<Option<ForecastResponse>> = vec![None; reqs.len()];
        // id -> (request index, deadline)
        let mut pending: HashMap<u64, (usize, Instant)> = HashMap::new();
        let mut next = 0;
        let mut done = 0;
        let outcome = loop {
            if done == reqs.len() {
                break Ok(());
            }
            while pending.len() < self.max_in_flight && next < reqs.len() {
                let id = self.next_id;
                self.next_id += 1;
                let r = &reqs[next];
                let line = encode(&Message::Forecast {
                    id,
                    history: r.history.clone(),
                    horizon: r.horizon,
                    interval_seconds: r.interval_seconds,
                });
                if self.transport.send_line(&line).is_err() {
                    return Err(self.die());
                }
                pending.insert(id, (next, Instant::now() + self.request_timeout));
                next += 1;
            }
            let (&id, &(idx, deadline)) = pending.iter().min_by_key(|(&id, &(_, d))| (d, id)).expect("pending request");
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break Err(BridgeError::RequestTimeout {
                    id,
                    series: reqs[idx].series_id.clone(),
                    after: self.request_timeout,
                });
            }
            let line = match self.transport.recv_line(left) {
                Recv::Timeout => continue,
                Recv::Closed => return Err(self.die()),
                Recv::Line(line) if line.trim().is_empty() => continue,
                Recv::Line(line) => line,
            };
            match decode(&line) {
                Ok(Message::ForecastResult { id, forecast }) => {
                    if let Some((idx, _)) = pending.remove(&id) {
                        let req = &reqs[idx];
                        let resp = ForecastResponse {
                            series_id: req.series_id.clone(),
                            forecast,
                            coefficients: Default::default(),
                        };
                        if let Err(detail) = resp.check_against(req) {
                            break Err(BridgeError::DimensionMismatch { series: req.series_id.clone(), detail });
                        }
                        results[idx] = Some(resp);
                        done += 1;
                    } else if !self.abandoned.remove(&id) {
                        break Err(BridgeError::Protocol(format!("result for unknown request id {id}")));
                    }
                }
                Ok(Message::Error { id: Some(id), .. }) if self.abandoned.remove(&id) => {}
                Ok(Message::Error { id, message }) => break Err(BridgeError::Adapter { id, message }),
                Ok(other) => break Err(BridgeError::Protocol(format!("unexpected {} message", other.kind()))),
                Err(e) => break Err(decode_error(&line, e)),
            }
        };
        self.abandoned.extend(pending.keys());
        outcome.map(|()| results.into_iter().map(|r| r.expect("every request answered")).collect())
    }

    fn die(&mut self) -> BridgeError {
        let diagnostics = self.transport.diagnostics();
        self.dead = Some(diagnostics.clone());
        BridgeError::SessionDead { diagnostics }
    }

    /// Sends `shutdown` and waits [`DEFAULT_SHUTDOWN_GRACE`] before killing the adapter.
    pub fn shutdown(&mut self) -> ExitReport {
        self.shutdown_with_grace(DEFAULT_SHUTDOWN_GRACE)
    }

    /// A second call returns a `noop` report carrying the first exit code.
    pub fn shutdown_with_grace(&mut self, grace: Duration) -> ExitReport {
        if let Some(first) = &self.exit {
            return ExitReport { noop: true, forced: false, ..first.clone() };
        }
        let _ = self.transport.send_line(&encode(&Message::Shutdown));
        let report = self.transport.terminate(grace);
        self.exit = Some(report.clone());
        report
    }
}

impl Drop for AdapterSession {
    fn drop(&mut self) {
        if self.exit.is_none() {
            self.shutdown_with_grace(Duration::from_millis(200));
        }
    }
}

fn decode_error(line: &str, e: DecodeError) -> BridgeError {
    match e {
        DecodeError::Malformed(reason) => BridgeError::Malformed { line: truncate(line), reason },
        DecodeError::UnknownType(t) => BridgeError::Protocol(format!("unknown message type {t:?}")),
    }
}
