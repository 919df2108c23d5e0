//! Newline-delimited JSON tag protocol between a simulated PEA and a POL client.
//!
//! Every frame is one JSON object on one line, `op` first:
//!
//! ```text
//! {"op":"hello","client":"pol","proto":1}
//! {"op":"browse"}
//! {"op":"browse_result","items":[{"node":"EM001/V","guid":"...","unit":"V"}]}
//! {"op":"subscribe","nodes":["EM001/V"],"interval_ms":100}
//! {"op":"update","node":"EM001/V","value":50.0,"ts":"2025-01-01T00:00:00.000Z","q":"good"}
//! {"op":"read","nodes":["EM001/V"],"id":7}
//! {"op":"reset","node":"EM001/V"}
//! {"op":"ack","id":7}
//! {"op":"error","code":"not_counter","msg":"..."}
//! ```

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use crate::enrg::AttributeValue as TagValue;

pub const PROTO_VERSION: u32 = 1;
pub const MIN_INTERVAL_MS: u64 = 10;

const KNOWN_OPS: [&str; 9] = [
    "hello",
    "browse",
    "browse_result",
    "read",
    "subscribe",
    "update",
    "reset",
    "ack",
    "error",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagbusError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("missing field `{0}`")]
    MissingField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    #[default]
    Good,
    OutOfRange,
    Stale,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Good => "good",
            Quality::OutOfRange => "out_of_range",
            Quality::Stale => "stale",
        }
    }
}

/// UTC instant with millisecond resolution, `YYYY-MM-DDTHH:MM:SS.mmmZ` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Self(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn offset(self, ms: i64) -> Self {
        Self(self.0 + ms)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match Utc.timestamp_millis_opt(self.0).single() {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%S%.3fZ")),
            None => write!(f, "invalid-timestamp({})", self.0),
        }
    }
}

impl FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
            .map_err(|e| format!("bad timestamp `{s}`: {e}"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrowseItem {
    pub node: String,
    pub guid: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagUpdate {
    pub node: String,
    pub value: TagValue,
    pub ts: Timestamp,
    pub q: Quality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TagMessage {
    Hello {
        client: String,
        proto: u32,
    },
    Browse,
    BrowseResult {
        items: Vec<BrowseItem>,
    },
    Read {
        nodes: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    Subscribe {
        nodes: Vec<String>,
        interval_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    Update(TagUpdate),
    Reset {
        node: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    Error {
        code: String,
        msg: String,
    },
}

impl TagMessage {
    pub fn error(code: impl Into<String>, msg: impl Into<String>) -> Self {
        TagMessage::Error {
            code: code.into(),
            msg: msg.into(),
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            TagMessage::Hello { .. } => "hello",
            TagMessage::Browse => "browse",
            TagMessage::BrowseResult { .. } => "browse_result",
            TagMessage::Read { .. } => "read",
            TagMessage::Subscribe { .. } => "subscribe",
            TagMessage::Update(_) => "update",
            TagMessage::Reset { .. } => "reset",
            TagMessage::Ack { .. } => "ack",
            TagMessage::Error { .. } => "error",
        }
    }
}

/// One line of UTF-8 JSON, terminated by `\n`. Numeric values must be finite.
pub fn encode_message(msg: &TagMessage) -> String {
    let mut line = serde_json::to_string(msg).expect("tag messages always serialize");
    line.push('\n');
    line
}

pub fn decode_message(line: &[u8]) -> Result<TagMessage, TagbusError> {
    let text = std::str::from_utf8(line)
        .map_err(|e| TagbusError::MalformedFrame(format!("invalid UTF-8: {e}")))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| TagbusError::MalformedFrame(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| TagbusError::MalformedFrame("frame is not a JSON object".into()))?;
    let op = match object.get("op") {
        None => return Err(TagbusError::MissingField("op".into())),
        Some(serde_json::Value::String(op)) => op.as_str(),
        Some(_) => return Err(TagbusError::MalformedFrame("`op` is not a string".into())),
    };
    if !KNOWN_OPS.contains(&op) {
        return Err(TagbusError::UnknownOp(op.to_owned()));
    }
    serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        match missing_field_name(&message) {
            Some(name) => TagbusError::MissingField(name),
            None => TagbusError::MalformedFrame(message),
        }
    })
}

fn missing_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_owned)
}
