//! Reference stub adapter, shared by the in-process loopback transport and the
//! `odflow-stub-adapter` binary.
//!
//! Besides well-behaved persistence and seasonal-naive backends it has modes
//! that misbehave in one specific way each, so every failure path of a
//! session can be exercised.

use std::fmt;
use std::str::FromStr;

use super::codec::{decode, encode, DecodeError, Message, PROTOCOL_VERSION};
use crate::forecast::{forecast_persistence, forecast_seasonal_naive, ForecastRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    Persistence,
    SeasonalNaive,
    /// Holds each odd-numbered request and answers it after the next one.
    Reorder,
    /// Answers with one step more than requested.
    WrongHorizon,
    /// Answers the handshake, then never replies or exits.
    Hang,
    /// Answers the handshake, then exits with status 3 on the first forecast.
    ExitOnForecast,
    Protocol2,
    /// Replies to forecasts with a line that is not JSON.
    Malformed,
    /// Never answers the handshake.
    Silent,
    /// Behaves like persistence but ignores shutdown.
    IgnoreShutdown,
    /// Replies to every forecast with an error message.
    ErrorReply,
    /// Replies to forecasts with an unknown message type.
    UnknownType,
}

const MODES: [(&str, StubMode); 12] = [
    ("persistence", StubMode::Persistence),
    ("seasonal-naive", StubMode::SeasonalNaive),
    ("reorder", StubMode::Reorder),
    ("wrong-horizon", StubMode::WrongHorizon),
    ("hang", StubMode::Hang),
    ("exit-on-forecast", StubMode::ExitOnForecast),
    ("protocol2", StubMode::Protocol2),
    ("malformed", StubMode::Malformed),
    ("silent", StubMode::Silent),
    ("ignore-shutdown", StubMode::IgnoreShutdown),
    ("error-reply", StubMode::ErrorReply),
    ("unknown-type", StubMode::UnknownType),
];

impl StubMode {
    pub fn all() -> impl Iterator<Item = StubMode> {
        MODES.iter().map(|&(_, m)| m)
    }

    pub fn name(self) -> &'static str {
        MODES.iter().find(|&&(_, m)| m == self).map(|&(n, _)| n).expect("every mode is listed")
    }
}

impl fmt::Display for StubMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StubMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MODES.iter().find(|&&(n, _)| n == s).map(|&(_, m)| m).ok_or_else(|| {
            let names: Vec<&str> = MODES.iter().map(|&(n, _)| n).collect();
            format!("unknown stub mode {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubAction {
    /// Write these lines (without newlines) to stdout.
    Reply(Vec<String>),
    /// Write `diagnostic` to stderr, if any, and exit with `code`.
    Exit { code: i32, diagnostic: Option<String> },
    Nothing,
}

#[derive(Debug)]
pub struct StubAdapter {
    mode: StubMode,
    held: Option<String>,
}

impl StubAdapter {
    pub fn new(mode: StubMode) -> Self {
        Self { mode, held: None }
    }

    pub fn mode(&self) -> StubMode {
        self.mode
    }

    /// Handles one input line.
    pub fn handle(&mut self, line: &str) -> StubAction {
        let msg = match decode(line) {
            Ok(m) => m,
            Err(DecodeError::Malformed(reason)) => return self.error(None, format!("malformed message: {reason}")),
            Err(DecodeError::UnknownType(t)) => return self.error(None, format!("unknown message type {t:?}")),
        };
        match msg {
            Message::Hello { .. } => match self.mode {
                StubMode::Silent => StubAction::Nothing,
                StubMode::Protocol2 => self.reply(Message::Hello { protocol: 2, name: Some(self.name()) }),
                _ => self.reply(Message::Hello { protocol: PROTOCOL_VERSION, name: Some(self.name()) }),
            },
            Message::Shutdown => match self.mode {
                StubMode::Hang | StubMode::IgnoreShutdown => StubAction::Nothing,
                _ => StubAction::Exit { code: 0, diagnostic: None },
            },
            Message::Forecast { id, history, horizon, interval_seconds } => {
                let req = ForecastRequest::new(id.to_string(), history, horizon, interval_seconds);
                self.forecast(id, &req)
            }
            other => self.error(None, format!("unexpected message type {:?}", other.kind())),
        }
    }

    fn name(&self) -> String {
        format!("odflow-stub/{}", self.mode)
    }

    fn reply(&self, msg: Message) -> StubAction {
        StubAction::Reply(vec![encode(&msg)])
    }

    fn error(&self, id: Option<u64>, message: String) -> StubAction {
        self.reply(Message::Error { id, message })
    }

    fn forecast(&mut self, id: u64, req: &ForecastRequest) -> StubAction {
        let computed = match self.mode {
            StubMode::SeasonalNaive => forecast_seasonal_naive(req),
            _ => forecast_persistence(req),
        };
        let mut forecast = match computed {
            Ok(r) => r.forecast,
            Err(e) => return self.error(Some(id), e.to_string()),
        };
        match self.mode {
            StubMode::Hang => StubAction::Nothing,
            StubMode::ExitOnForecast => StubAction::Exit {
                code: 3,
                diagnostic: Some(format!("stub adapter: simulated crash on request {id}")),
            },
            StubMode::Malformed => StubAction::Reply(vec![format!("{{\"type\":\"forecast_result\",\"id\":{id},")]),
            StubMode::ErrorReply => self.error(Some(id), "backend unavailable".into()),
            StubMode::UnknownType => StubAction::Reply(vec![format!("{{\"type\":\"progress\",\"id\":{id}}}")]),
            StubMode::WrongHorizon => {
                forecast.push(forecast[0].clone());
                self.reply(Message::ForecastResult { id, forecast })
            }
            StubMode::Reorder => {
                let line = encode(&Message::ForecastResult { id, forecast });
                match self.held.take() {
                    Some(earlier) => StubAction::Reply(vec![line, earlier]),
                    None => {
                        self.held = Some(line);
                        StubAction::Nothing
                    }
                }
            }
            StubMode::Persistence | StubMode::SeasonalNaive | StubMode::IgnoreShutdown | StubMode::Protocol2
            | StubMode::Silent => self.reply(Message::ForecastResult { id, forecast }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forecast_line(id: u64) -> String {
        encode(&Message::Forecast { id, history: vec![vec![1.0], vec![2.0]], horizon: 1, interval_seconds: 3600 })
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in StubMode::all() {
            assert_eq!(m.name().parse::<StubMode>().unwrap(), m);
        }
        assert!("nope".parse::<StubMode>().is_err());
    }

    #[test]
    fn persistence_dialogue() {
        let mut stub = StubAdapter::new(StubMode::Persistence);
        let StubAction::Reply(lines) = stub.handle(r#"{"type":"hello","protocol":1}"#) else { panic!() };
        assert_eq!(lines, vec![r#"{"type":"hello","protocol":1,"name":"odflow-stub/persistence"}"#.to_string()]);
        let StubAction::Reply(lines) = stub.handle(&forecast_line(4)) else { panic!() };
        assert_eq!(lines, vec![r#"{"type":"forecast_result","id":4,"forecast":[[2.0]]}"#.to_string()]);
        assert_eq!(stub.handle(r#"{"type":"shutdown"}"#), StubAction::Exit { code: 0, diagnostic: None });
    }

    #[test]
    fn reorder_swaps_pairs() {
        let mut stub = StubAdapter::new(StubMode::Reorder);
        assert_eq!(stub.handle(&forecast_line(1)), StubAction::Nothing);
        let StubAction::Reply(lines) = stub.handle(&forecast_line(2)) else { panic!() };
        let ids: Vec<u64> = lines
            .iter()
            .map(|l| match decode(l).unwrap() {
                Message::ForecastResult { id, .. } => id,
                m => panic!("{m:?}"),
            })
            .collect();
        assert_eq!(ids, vec![2, 1]);
    }

    #[test]
    fn bad_input_gets_error_reply() {
        let mut stub = StubAdapter::new(StubMode::Persistence);
        let StubAction::Reply(lines) = stub.handle(r#"{"type":"warp"}"#) else { panic!() };
        assert!(matches!(decode(&lines[0]).unwrap(), Message::Error { id: None, .. }));
    }
}
