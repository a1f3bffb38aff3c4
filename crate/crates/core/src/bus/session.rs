use serde::{Deserialize, Serialize};

use crate::script::{ActionKind, DeviceRole};

pub const DEFAULT_HEARTBEAT_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnState {
    Connected,
    Degraded,
    Lost,
}

/// Connection state after `now - last_heartbeat` ms of silence: degraded
/// once a whole interval is missed, lost after three.
pub fn liveness(last_heartbeat: u64, now: u64, interval_ms: u64) -> ConnState {
    let missed = now.saturating_sub(last_heartbeat) / interval_ms.max(1);
    match missed {
        0 => ConnState::Connected,
        1 | 2 => ConnState::Degraded,
        _ => ConnState::Lost,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSession {
    pub id: String,
    pub role: DeviceRole,
    pub capabilities: Vec<ActionKind>,
    pub state: ConnState,
    pub last_heartbeat: u64,
}

impl DeviceSession {
    /// Empty `capabilities` means everything the role accepts.
    pub fn new(id: impl Into<String>, role: DeviceRole, capabilities: Vec<ActionKind>, now: u64) -> Self {
        let capabilities = if capabilities.is_empty() {
            role.accepted_kinds().to_vec()
        } else {
            capabilities
        };
        DeviceSession {
            id: id.into(),
            role,
            capabilities,
            state: ConnState::Connected,
            last_heartbeat: now,
        }
    }

    pub fn can_perform(&self, kind: ActionKind) -> bool {
        self.capabilities.contains(&kind)
    }

    pub fn can_dispatch(&self, kind: ActionKind) -> bool {
        self.state == ConnState::Connected && self.can_perform(kind)
    }

    /// Records a heartbeat; returns the new state if it changed.
    pub fn heartbeat(&mut self, now: u64) -> Option<ConnState> {
        self.last_heartbeat = self.last_heartbeat.max(now);
        self.set(ConnState::Connected)
    }

    /// Re-evaluates liveness; returns the new state if it changed. A lost
    /// session stays lost until it sends a heartbeat.
    pub fn check(&mut self, now: u64, interval_ms: u64) -> Option<ConnState> {
        if self.state == ConnState::Lost {
            return None;
        }
        self.set(liveness(self.last_heartbeat, now, interval_ms))
    }

    pub fn mark_lost(&mut self) -> Option<ConnState> {
        self.set(ConnState::Lost)
    }

    fn set(&mut self, state: ConnState) -> Option<ConnState> {
        (self.state != state).then(|| {
            self.state = state;
            state
        })
    }
}
