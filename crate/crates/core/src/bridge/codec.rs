//! Wire messages: UTF-8 JSON objects, one per line.
//!
//! Encoding never emits a trailing newline; transports add the `\n`.
//! Decoding ignores unknown fields but separates three failure kinds: a line
//! that is not a JSON object with a string `type` is malformed, an unknown
//! `type` is a protocol error, and a known type with bad fields is malformed.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

const KNOWN_TYPES: [&str; 5] = ["hello", "forecast", "forecast_result", "error", "shutdown"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Forecast {
        id: u64,
        history: Vec<Vec<f64>>,
        horizon: usize,
        interval_seconds: u32,
    },
    ForecastResult {
        id: u64,
        forecast: Vec<Vec<f64>>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
    Shutdown,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Forecast { .. } => "forecast",
            Message::ForecastResult { .. } => "forecast_result",
            Message::Error { .. } => "error",
            Message::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Malformed(String),
    UnknownType(String),
}

pub fn encode(msg: &Message) -> String {
    // Every variant holds only strings, integers and finite-or-null floats.
    serde_json::to_string(msg).expect("message serialization is infallible")
}

pub fn decode(line: &str) -> Result<Message, DecodeError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| DecodeError::Malformed(format!("invalid JSON: {e}")))?;
    let Some(kind) = value.get("type").and_then(|t| t.as_str()) else {
        return Err(DecodeError::Malformed("expected a JSON object with a string \"type\"".into()));
    };
    if !KNOWN_TYPES.contains(&kind) {
        return Err(DecodeError::UnknownType(kind.to_string()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed(e.to_string()))
}
