use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::stub::{StubAction, StubAdapter, StubMode};

/// Lines of adapter stderr kept for diagnostics.
const STDERR_KEEP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recv {
    Line(String),
    /// Nothing arrived within the timeout.
    Timeout,
    /// The adapter closed its output; nothing more will arrive.
    Closed,
}

/// How an adapter ended.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExitReport {
    /// `None` when killed by a signal or when the status is unknown.
    pub exit_code: Option<i32>,
    /// The adapter outlived the grace period and was killed.
    pub forced: bool,
    /// The session had already been shut down; nothing was done.
    pub noop: bool,
    pub diagnostics: String,
}

impl ExitReport {
    pub fn is_clean(&self) -> bool {
        self.exit_code == Some(0) && !self.forced
    }
}

/// A bidirectional line channel to one adapter.
pub trait Transport: Send {
    /// Writes one line; `line` carries no trailing newline.
    fn send_line(&mut self, line: &str) -> io::Result<()>;
    /// Waits at most `timeout` for the next line.
    fn recv_line(&mut self, timeout: Duration) -> Recv;
    /// Captured stderr and exit status so far, for error messages.
    fn diagnostics(&mut self) -> String;
    /// Closes the adapter's input, waits up to `grace` for it to exit, then kills it.
    fn terminate(&mut self, grace: Duration) -> ExitReport;
}

/// The stub adapter running in-process behind the same line codec.
#[derive(Debug)]
pub struct LoopbackTransport {
    stub: StubAdapter,
    outbox: VecDeque<String>,
    exit: Option<(i32, Option<String>)>,
}

impl LoopbackTransport {
    pub fn new(mode: StubMode) -> Self {
        Self { stub: StubAdapter::new(mode), outbox: VecDeque::new(), exit: None }
    }
}

impl Transport for LoopbackTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        if self.exit.is_some() {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "loopback adapter has exited"));
        }
        match self.stub.handle(line) {
            StubAction::Reply(lines) => self.outbox.extend(lines),
            StubAction::Exit { code, diagnostic } => self.exit = Some((code, diagnostic)),
            StubAction::Nothing => {}
        }
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Recv {
        if let Some(line) = self.outbox.pop_front() {
            return Recv::Line(line);
        }
        if self.exit.is_some() {
            return Recv::Closed;
        }
        // Nothing can arrive without another send, so the full wait always times out.
        thread::sleep(timeout);
        Recv::Timeout
    }

    fn diagnostics(&mut self) -> String {
        match &self.exit {
            Some((code, Some(d))) => format!("{d}\nexit status: {code}"),
            Some((code, None)) => format!("exit status: {code}"),
            None => format!("loopback stub ({}) running", self.stub.mode()),
        }
    }

    fn terminate(&mut self, _grace: Duration) -> ExitReport {
        let diagnostics = self.diagnostics();
        match self.exit {
            Some((code, _)) => ExitReport { exit_code: Some(code), diagnostics, ..ExitReport::default() },
            None => {
                self.exit = Some((-1, None));
                ExitReport { exit_code: None, forced: true, noop: false, diagnostics }
            }
        }
    }
}

/// An adapter child process speaking the protocol on stdin/stdout.
///
/// A reader thread forwards stdout lines over a channel so reads can time
/// out; another thread keeps the tail of stderr for diagnostics.
pub struct ProcessTransport {
    program: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    stderr_thread: Option<thread::JoinHandle<()>>,
}

impl ProcessTransport {
    pub fn spawn(command: &[String]) -> io::Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty adapter command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().ok_or_else(|| io::Error::other("adapter stdout unavailable"))?;
        let stderr_pipe = child.stderr.take().ok_or_else(|| io::Error::other("adapter stderr unavailable"))?;

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(line.trim_end_matches(['\n', '\r']).to_string()).is_err() {
                            break;
                        }
                    }
                }
            }
        });

        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let sink = Arc::clone(&stderr);
        let stderr_thread = thread::spawn(move || {
            let mut reader = BufReader::new(stderr_pipe);
            let mut buf = Vec::new();
            loop {
                buf.clear();
                match reader.by_ref().read_until(b'\n', &mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        let text = String::from_utf8_lossy(&buf).trim_end().to_string();
                        let mut tail = sink.lock().unwrap_or_else(|p| p.into_inner());
                        if tail.len() == STDERR_KEEP {
                            tail.pop_front();
                        }
                        tail.push_back(text);
                    }
                }
            }
        });

        Ok(Self {
            program: program.clone(),
            child,
            stdin,
            lines,
            stderr,
            stderr_thread: Some(stderr_thread),
        })
    }

    pub fn id(&self) -> u32 {
        self.child.id()
    }

    fn wait_until(&mut self, deadline: Instant) -> Option<std::process::ExitStatus> {
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return None,
            }
        }
    }

    fn stderr_tail(&mut self, settle: Duration) -> String {
        // After exit the stderr pipe reaches EOF shortly; give the reader a moment.
        if let Some(handle) = self.stderr_thread.take() {
            let deadline = Instant::now() + settle;
            while !handle.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(2));
            }
            if handle.is_finished() {
                let _ = handle.join();
            } else {
                self.stderr_thread = Some(handle);
            }
        }
        let tail = self.stderr.lock().unwrap_or_else(|p| p.into_inner());
        tail.iter().cloned().collect::<Vec<_>>().join("\n")
    }
}

fn describe(status: std::process::ExitStatus) -> String {
    match status.code() {
        Some(c) => format!("exit status: {c}"),
        None => format!("terminated: {status}"),
    }
}

impl Transport for ProcessTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "adapter stdin closed"))?;
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        stdin.write_all(&buf)?;
        stdin.flush()
    }

    fn recv_line(&mut self, timeout: Duration) -> Recv {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Recv::Line(line),
            Err(RecvTimeoutError::Timeout) => Recv::Timeout,
            Err(RecvTimeoutError::Disconnected) => Recv::Closed,
        }
    }

    fn diagnostics(&mut self) -> String {
        let status = self.wait_until(Instant::now() + Duration::from_millis(500));
        let tail = self.stderr_tail(Duration::from_millis(200));
        let status = status.map_or_else(|| format!("{} still running", self.program), describe);
        if tail.is_empty() {
            status
        } else {
            format!("{tail}\n{status}")
        }
    }

    fn terminate(&mut self, grace: Duration) -> ExitReport {
        self.stdin.take();
        let (status, forced) = match self.wait_until(Instant::now() + grace) {
            Some(status) => (Some(status), false),
            None => {
                let _ = self.child.kill();
                (self.child.wait().ok(), true)
            }
        };
        let tail = self.stderr_tail(Duration::from_millis(200));
        let mut diagnostics = status.map_or_else(|| "exit status unknown".to_string(), describe);
        if !tail.is_empty() {
            diagnostics = format!("{tail}\n{diagnostics}");
        }
        ExitReport { exit_code: status.and_then(|s| s.code()), forced, noop: false, diagnostics }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}
