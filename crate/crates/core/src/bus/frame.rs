use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::{Ack, Bye, ErrorBody, Event, Hello, Register, Snapshot};
use crate::engine::{DeviceCommand, EngineInput};

pub const PROTOCOL_VERSION: &str = "1.0.0";

/// Largest payload a frame may carry, in bytes (the prefix is not counted).
pub const MAX_PAYLOAD: usize = 1024 * 1024;

const PREFIX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Hello,
    Register,
    Command,
    Ack,
    Event,
    OperatorInput,
    StateSnapshot,
    Error,
    Bye,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::Hello,
        MsgType::Register,
        MsgType::Command,
        MsgType::Ack,
        MsgType::Event,
        MsgType::OperatorInput,
        MsgType::StateSnapshot,
        MsgType::Error,
        MsgType::Bye,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Hello => "hello",
            MsgType::Register => "register",
            MsgType::Command => "command",
            MsgType::Ack => "ack",
            MsgType::Event => "event",
            MsgType::OperatorInput => "operator_input",
            MsgType::StateSnapshot => "state_snapshot",
            MsgType::Error => "error",
            MsgType::Bye => "bye",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsgType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Frame body, tagged on the wire by `msg_type` with the body under `payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg_type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Register(Register),
    Command(DeviceCommand),
    Ack(Ack),
    Event(Event),
    OperatorInput(EngineInput),
    StateSnapshot(Box<Snapshot>),
    Error(ErrorBody),
    Bye(Bye),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::Register(_) => MsgType::Register,
            Message::Command(_) => MsgType::Command,
            Message::Ack(_) => MsgType::Ack,
            Message::Event(_) => MsgType::Event,
            Message::OperatorInput(_) => MsgType::OperatorInput,
            Message::StateSnapshot(_) => MsgType::StateSnapshot,
            Message::Error(_) => MsgType::Error,
            Message::Bye(_) => MsgType::Bye,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub protocol_version: String,
    pub message: Message,
}

impl Frame {
    /// A frame stamped with this crate's protocol version.
    pub fn new(message: Message) -> Self {
        Frame {
            protocol_version: PROTOCOL_VERSION.to_string(),
            message,
        }
    }

    pub fn msg_type(&self) -> MsgType {
        self.message.msg_type()
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Frame::new(Message::Error(ErrorBody {
            code: code.to_string(),
            message: message.into(),
            command_id: None,
        }))
    }

    /// The JSON payload of the frame, as carried by the message socket.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Wire<'a> {
            protocol_version: &'a str,
            #[serde(flatten)]
            message: &'a Message,
        }
        serde_json::to_string(&Wire {
            protocol_version: &self.protocol_version,
            message: &self.message,
        })
        .expect("frames serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FrameError> {
        decode_payload(text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD} byte limit")]
    FrameTooLarge { len: usize },
    #[error("malformed frame: {0}")]
    MalformedJson(String),
    #[error("unknown msg_type `{0}`")]
    UnknownType(String),
    #[error("frame is incomplete: {needed} more bytes needed")]
    Incomplete { needed: usize },
}

impl FrameError {
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::FrameTooLarge { .. } => "FrameTooLarge",
            FrameError::MalformedJson(_) => "MalformedJson",
            FrameError::UnknownType(_) => "UnknownType",
            FrameError::Incomplete { .. } => "Incomplete",
        }
    }
}

/// Length prefix followed by the JSON payload.
pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let json = frame.to_json();
    if json.len() > MAX_PAYLOAD {
        return Err(FrameError::FrameTooLarge { len: json.len() });
    }
    let mut out = Vec::with_capacity(PREFIX + json.len());
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(json.as_bytes());
    Ok(out)
}

/// Decodes exactly one complete frame, prefix included.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < PREFIX {
        return Err(FrameError::Incomplete {
            needed: PREFIX - bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..PREFIX].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::FrameTooLarge { len });
    }
    let body = &bytes[PREFIX..];
    if body.len() < len {
        return Err(FrameError::Incomplete {
            needed: len - body.len(),
        });
    }
    if body.len() > len {
        return Err(FrameError::MalformedJson(format!(
            "{} trailing bytes after the frame",
            body.len() - len
        )));
    }
    decode_payload(body)
}

/// Decodes a bare JSON payload.
pub fn decode_payload(payload: &[u8]) -> Result<Frame, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::FrameTooLarge { len: payload.len() });
    }
    let malformed = |e: &dyn fmt::Display| FrameError::MalformedJson(e.to_string());
    let mut obj: Map<String, Json> = match serde_json::from_slice(payload).map_err(|e| malformed(&e))? {
        Json::Object(m) => m,
        _ => return Err(FrameError::MalformedJson("frame is not a JSON object".into())),
    };
    let msg_type = match obj.get("msg_type") {
        Some(Json::String(s)) => s.clone(),
        _ => return Err(FrameError::MalformedJson("msg_type is missing or not a string".into())),
    };
    msg_type.parse::<MsgType>().map_err(FrameError::UnknownType)?;
    let protocol_version = match obj.remove("protocol_version") {
        Some(Json::String(v)) => v,
        _ => {
            return Err(FrameError::MalformedJson(
                "protocol_version is missing or not a string".into(),
            ))
        }
    };
    let message = serde_json::from_value(Json::Object(obj)).map_err(|e| malformed(&e))?;
    Ok(Frame {
        protocol_version,
        message,
    })
}

/// Incremental decoder for the length-prefixed stream.
///
/// An oversized frame is reported once and its payload skipped, so the
/// stream stays usable afterwards.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: VecDeque<u8>,
    skip: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        let dropped = self.skip.min(bytes.len());
        self.skip -= dropped;
        self.buf.extend(&bytes[dropped..]);
    }

    /// Bytes held but not yet decoded.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// `Ok(None)` means more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.len() < PREFIX {
            return Ok(None);
        }
        let mut prefix = [0u8; PREFIX];
        for (i, b) in self.buf.iter().take(PREFIX).enumerate() {
            prefix[i] = *b;
        }
        let len = u32::from_be_bytes(prefix) as usize;
        if len > MAX_PAYLOAD {
            self.buf.drain(..PREFIX);
            let now = len.min(self.buf.len());
            self.buf.drain(..now);
            self.skip = len - now;
            return Err(FrameError::FrameTooLarge { len });
        }
        if self.buf.len() < PREFIX + len {
            return Ok(None);
        }
        self.buf.drain(..PREFIX);
        let payload: Vec<u8> = self.buf.drain(..len).collect();
        decode_payload(&payload).map(Some)
    }
}

/// Major component of a semver string.
pub fn major_version(v: &str) -> Option<u64> {
    v.split('.').next()?.parse().ok()
}
