//! Wire messages. Every message is one UTF-8 JSON object carrying `"v"`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", content = "args", rename_all = "snake_case")]
pub enum Command {
    SetTargets {
        ids: Vec<String>,
    },
    SetStrength {
        alpha: f64,
    },
    StartSession {
        #[serde(default)]
        device_rate: Option<u32>,
        #[serde(default)]
        targets: Option<Vec<String>>,
        #[serde(default)]
        alpha: Option<f64>,
    },
    StopSession,
    AcceptSuggestion {
        id: u64,
    },
    DismissSuggestion {
        id: u64,
    },
    SaveSnapshot {
        suggestion_id: u64,
        name: String,
    },
    AddRecording {
        class_id: String,
        sample_rate: u32,
        samples: Vec<f32>,
    },
    FinalizeClass {
        id: String,
    },
    ListClasses,
    ListProfiles,
    UpsertProfile {
        #[serde(default)]
        id: Option<u64>,
        description: String,
    },
    DeleteProfile {
        id: u64,
    },
}

impl Command {
    /// Commands that change service state; these are replayed from the
    /// reply cache when a request id is retried.
    pub fn is_mutating(&self) -> bool {
        !matches!(self, Command::ListClasses | Command::ListProfiles)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: String,
    pub cmd: Command,
}

impl Request {
    pub fn new(id: impl Into<String>, cmd: Command) -> Self {
        Request { id: id.into(), cmd }
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(&self.cmd).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut v {
            m.insert("v".into(), json!(PROTOCOL_VERSION));
            m.insert("id".into(), json!(self.id));
        }
        v.to_string()
    }

    /// Parses a request. On failure returns the request id when one could
    /// be read, so the error reply can echo it.
    pub fn parse(text: &str) -> Result<Self, (Option<String>, String)> {
        let v: Value = serde_json::from_str(text).map_err(|e| (None, format!("invalid JSON: {e}")))?;
        let Value::Object(mut m) = v else {
            return Err((None, "message is not an object".into()));
        };
        let id = match m.remove("id") {
            Some(Value::String(s)) => s,
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err((None, "missing request id".into())),
        };
        match m.remove("v").and_then(|v| v.as_u64()) {
            Some(v) if v == PROTOCOL_VERSION as u64 => {}
            Some(v) => return Err((Some(id), format!("unsupported protocol version {v}"))),
            None => return Err((Some(id), "missing protocol version".into())),
        }
        let cmd = serde_json::from_value(Value::Object(m)).map_err(|e| (Some(id.clone()), format!("bad command: {e}")))?;
        Ok(Request { id, cmd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub v: u32,
    pub id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Reply {
    pub fn ok(id: &str, result: Value) -> Self {
        Reply { v: PROTOCOL_VERSION, id: Some(id.to_string()), ok: true, result: Some(result), error: None }
    }

    pub fn err(id: Option<&str>, code: &str, message: impl Into<String>) -> Self {
        Reply {
            v: PROTOCOL_VERSION,
            id: id.map(str::to_string),
            ok: false,
            result: None,
            error: Some(ErrorBody { code: code.to_string(), message: message.into() }),
        }
    }

    pub fn code(&self) -> Option<&str> {
        self.error.as_ref().map(|e| e.code.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    /// `running` or `stopped`
    pub session: String,
    pub targets: Vec<String>,
    pub alpha: f64,
    pub device_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionInfo {
    pub id: u64,
    /// `known_class` or `save_unknown`
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// stream time, seconds
    pub created: f64,
    pub expires: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInfo {
    pub timestamp: f64,
    pub labels: Vec<LabelScore>,
}

/// Live counters; `cpu` and `battery` are always null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsInfo {
    pub stream_secs: f64,
    pub hops: u64,
    pub mean_hop_ms: f64,
    pub p95_hop_ms: f64,
    pub rtf: f64,
    pub latency_samples: i64,
    pub latency_ms: f64,
    pub lookahead_samples: i64,
    pub hop_samples: u64,
    pub occupancy_samples: u64,
    pub buffered: usize,
    pub high_water: usize,
    pub buffer_cap: usize,
    pub drops: u64,
    pub underruns: u64,
    pub cpu: Option<f64>,
    pub battery: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    State(StateInfo),
    Suggestion(SuggestionInfo),
    Detection(DetectionInfo),
    Metrics(MetricsInfo),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub v: u32,
    pub seq: u64,
    pub event: Event,
}

impl EventEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Anything the service sends: replies carry `ok`, events carry `seq`.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Reply(Reply),
    Event(EventEnvelope),
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        let v: Value = serde_json::from_str(text)?;
        if v.get("seq").is_some() {
            serde_json::from_value(v).map(ServerMessage::Event)
        } else {
            serde_json::from_value(v).map(ServerMessage::Reply)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requests_round_trip() {
        let cmds = [
            Command::SetTargets { ids: vec!["hum".into()] },
            Command::StopSession,
            Command::StartSession { device_rate: Some(48_000), targets: None, alpha: Some(0.5) },
            Command::UpsertProfile { id: None, description: "sharp beeps".into() },
        ];
        for c in cmds {
            let r = Request::new("r7", c);
            assert_eq!(Request::parse(&r.to_json()).unwrap(), r);
        }
    }

    #[test]
    fn wire_shape() {
        let r = Request::parse(r#"{"v":1,"id":"a","cmd":"set_strength","args":{"alpha":0.5}}"#).unwrap();
        assert_eq!(r.cmd, Command::SetStrength { alpha: 0.5 });
        assert_eq!(Request::parse(r#"{"v":1,"id":"b","cmd":"list_classes"}"#).unwrap().cmd, Command::ListClasses);
        assert_eq!(Request::parse(r#"{"v":1,"id":"c","cmd":"start_session","args":{}}"#).unwrap().cmd, Command::StartSession { device_rate: None, targets: None, alpha: None });
    }

    #[test]
    fn malformed_requests_keep_their_id() {
        assert_eq!(Request::parse(r#"{"v":1,"id":"x","cmd":"fly"}"#).unwrap_err().0.as_deref(), Some("x"));
        assert_eq!(Request::parse(r#"{"v":2,"id":"y","cmd":"list_classes"}"#).unwrap_err().0.as_deref(), Some("y"));
        assert_eq!(Request::parse("not json").unwrap_err().0, None);
        assert_eq!(Request::parse(r#"{"v":1,"cmd":"list_classes"}"#).unwrap_err().0, None);
    }

    #[test]
    fn server_messages_are_distinguishable() {
        let e = EventEnvelope { v: 1, seq: 4, event: Event::Error { message: "x".into() } };
        assert_eq!(ServerMessage::parse(&e.to_json()).unwrap(), ServerMessage::Event(e));
        let r = Reply::err(Some("q"), "range", "bad");
        assert_eq!(ServerMessage::parse(&r.to_json()).unwrap(), ServerMessage::Reply(r));
    }
}
