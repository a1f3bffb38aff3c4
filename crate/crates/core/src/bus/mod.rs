//! Wire protocol, device sessions, simulated devices and the live hub.
//!
//! Every frame is a JSON object `{protocol_version, msg_type, payload}`. On
//! the stream socket it is preceded by a 4-byte big-endian length; on the
//! console's websocket each message carries one frame as text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{CommandId, CueLogEntry, Engine, EngineState, Phase, REPAIR_MACROS};
use crate::script::{ActionKind, BranchSpec, DeviceRole};

mod client;
mod frame;
mod headless;
mod hub;
mod session;
mod sim;

pub use client::BusClient;
pub use frame::{
    decode_frame, decode_payload, encode_frame, major_version, Frame, FrameDecoder, FrameError, Message, MsgType,
    MAX_PAYLOAD, PROTOCOL_VERSION,
};
pub use headless::{run_headless, scaled_time, HeadlessError, HeadlessRun, OperatorScript, MAX_HEADLESS_EVENTS};
pub use hub::{serve, BusConfig, BusError, BusHandle, WallClock, DEFAULT_BIND, DEFAULT_WS_BIND};
pub use session::{liveness, ConnState, DeviceSession, DEFAULT_HEARTBEAT_MS};
pub use sim::{
    speak_duration_ms, SimHandle, SimulatedDevice, GESTURE_MS, PUPPET_MS, SPEAK_BASE_MS, SPEAK_PER_CHAR_MS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub client: String,
}

/// What a connection registers as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeerRole {
    Device(DeviceRole),
    Operator,
}

impl PeerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PeerRole::Device(r) => r.as_str(),
            PeerRole::Operator => "operator",
        }
    }
}

impl fmt::Display for PeerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeerRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "operator" {
            return Ok(PeerRole::Operator);
        }
        s.parse()
            .map(PeerRole::Device)
            .map_err(|_| format!("`{s}` is not a device role or `operator`"))
    }
}

impl Serialize for PeerRole {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PeerRole {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub id: String,
    pub role: PeerRole,
    /// Empty means everything the role accepts.
    #[serde(default)]
    pub capabilities: Vec<ActionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub command_id: CommandId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Heartbeat,
    /// A speaking device reached an SSML mark.
    MarkerReached { command_id: CommandId, marker_id: String },
    DeviceState { device_id: String, state: ConnState },
    Log { entry: CueLogEntry },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<CommandId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Bye {
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub role: DeviceRole,
    /// `None` until the device first registers.
    pub state: Option<ConnState>,
}

/// Everything an operator view needs, copied out of the engine after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_seq: u64,
    pub logical_time: u64,
    pub title: String,
    pub state: EngineState,
    pub scene_id: Option<String>,
    pub row_id: Option<String>,
    /// Signal the current gate is waiting for.
    pub gate: Option<String>,
    /// Branch being offered to the player.
    pub branch: Option<BranchSpec>,
    pub devices: BTreeMap<String, DeviceStatus>,
    pub repair_macros: Vec<String>,
}

impl Snapshot {
    pub fn of(engine: &Engine, snapshot_seq: u64, logical_time: u64, devices: BTreeMap<String, DeviceStatus>) -> Self {
        let state = engine.state().clone();
        let script = engine.script();
        let pos = state.pc;
        let scene_id = script.scenes.get(pos.0).map(|s| s.id.clone());
        let row_id = engine.current_row().map(|r| r.id.clone());
        let gate = match &state.phase {
            Phase::AwaitingGate { signal } => Some(signal.clone()),
            _ => None,
        };
        let branch = match &state.phase {
            Phase::AwaitingChoice { row_id } => script.row(row_id).and_then(|r| r.branch.clone()),
            _ => None,
        };
        Snapshot {
            snapshot_seq,
            logical_time,
            title: script.title.clone(),
            state,
            scene_id,
            row_id,
            gate,
            branch,
            devices,
            repair_macros: REPAIR_MACROS.iter().map(|m| m.to_string()).collect(),
        }
    }
}
