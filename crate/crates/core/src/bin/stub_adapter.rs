//! Stub forecaster adapter speaking the odflow line protocol on stdin/stdout.
//!
//! Usage: `odflow-stub-adapter [--mode MODE]` (default `persistence`).

use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::time::Duration;

use odflow::bridge::{StubAdapter, StubMode};
use odflow::bridge::stub::StubAction;

fn parse_mode() -> Result<StubMode, String> {
    let mut args = std::env::args().skip(1);
    let mut mode = StubMode::Persistence;
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--mode" => mode = args.next().ok_or("--mode needs a value")?.parse()?,
            s if s.starts_with("--mode=") => mode = s["--mode=".len()..].parse()?,
            "-h" | "--help" => {
                let modes: Vec<&str> = StubMode::all().map(StubMode::name).collect();
                println!("usage: odflow-stub-adapter [--mode {}]", modes.join("|"));
                std::process::exit(0);
            }
            other => return Err(format!("unexpected argument {other:?}")),
        }
    }
    Ok(mode)
}

fn park() -> ! {
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn main() -> ExitCode {
    let mode = match parse_mode() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("odflow-stub-adapter: {e}");
            return ExitCode::from(2);
        }
    };
    eprintln!("odflow-stub-adapter: mode {mode}");
    let mut stub = StubAdapter::new(mode);
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match stub.handle(&line) {
            StubAction::Reply(lines) => {
                for l in lines {
                    if writeln!(stdout, "{l}").and_then(|()| stdout.flush()).is_err() {
                        return ExitCode::from(1);
                    }
                }
            }
            StubAction::Exit { code, diagnostic } => {
                if let Some(d) = diagnostic {
                    eprintln!("{d}");
                }
                return ExitCode::from(code as u8);
            }
            StubAction::Nothing => {}
        }
    }
    if matches!(mode, StubMode::Hang | StubMode::IgnoreShutdown) {
        park();
    }
    ExitCode::SUCCESS
}
