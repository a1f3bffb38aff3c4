use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CommandId, DeviceCommand, EngineInput, Phase, TimedInput};
use crate::expr::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Input,
    Command,
    StateChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Disposition {
    Applied,
    Buffered,
    Ignored { reason: String },
    Rejected { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogPayload {
    Input {
        input: EngineInput,
        disposition: Disposition,
    },
    Command {
        command: DeviceCommand,
    },
    Started {
        title: String,
        rows: usize,
    },
    RowEntered {
        row_id: String,
    },
    RowSkipped {
        row_id: String,
    },
    RowFired {
        row_id: String,
    },
    RowCompleted {
        row_id: String,
    },
    TimerRequested {
        row_id: String,
        delay_ms: u64,
    },
    PhaseChanged {
        phase: Phase,
    },
    PointsChanged {
        from: i64,
        to: i64,
        reason: String,
    },
    VarSet {
        name: String,
        value: Value,
    },
    ChoiceTaken {
        row_id: String,
        choice_id: String,
        points: i64,
    },
    BufferedAckApplied {
        command_id: CommandId,
    },
    Repair {
        macro_id: String,
        args: Vec<String>,
    },
    CommandsAbandoned {
        device_id: String,
        command_ids: Vec<CommandId>,
    },
    Finished {
        points: i64,
    },
}

impl LogPayload {
    pub fn kind(&self) -> EntryKind {
        match self {
            LogPayload::Input { .. } => EntryKind::Input,
            LogPayload::Command { .. } => EntryKind::Command,
            _ => EntryKind::StateChange,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueLogEntry {
    pub logical_time: u64,
    pub kind: EntryKind,
    pub payload: LogPayload,
}

impl CueLogEntry {
    pub fn new(logical_time: u64, payload: LogPayload) -> Self {
        CueLogEntry {
            logical_time,
            kind: payload.kind(),
            payload,
        }
    }

    /// One NDJSON line, without the newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }
}

/// Append-only record of a run. Serialized as newline-delimited JSON.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CueLog {
    entries: Vec<CueLogEntry>,
}

impl CueLog {
    pub fn new() -> Self {
        CueLog::default()
    }

    pub fn push(&mut self, entry: CueLogEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[CueLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn start_time(&self) -> u64 {
        self.entries.first().map_or(0, |e| e.logical_time)
    }

    pub fn commands(&self) -> impl Iterator<Item = (u64, &DeviceCommand)> {
        self.entries.iter().filter_map(|e| match &e.payload {
            LogPayload::Command { command } => Some((e.logical_time, command)),
            _ => None,
        })
    }

    /// Every input the engine saw, in order, with its timestamp.
    pub fn inputs(&self) -> Vec<TimedInput> {
        self.entries
            .iter()
            .filter_map(|e| match &e.payload {
                LogPayload::Input { input, .. } => Some(TimedInput {
                    at: e.logical_time,
                    input: input.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn to_ndjson(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for e in &self.entries {
            writeln!(w, "{}", e.to_line())?;
        }
        Ok(())
    }

    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        Self::read_from(text.as_bytes()).map_err(|e| match e {
            LogReadError::Json(j) => j,
            LogReadError::Io(_) => unreachable!("reading from memory"),
        })
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, LogReadError> {
        let mut log = CueLog::new();
        for line in r.lines() {
            let line = line.map_err(LogReadError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            log.push(serde_json::from_str(&line).map_err(LogReadError::Json)?);
        }
        Ok(log)
    }

    /// Same log with every timestamp zeroed, for comparing runs at different time scales.
    pub fn without_timestamps(&self) -> CueLog {
        CueLog {
            entries: self
                .entries
                .iter()
                .map(|e| CueLogEntry {
                    logical_time: 0,
                    ..e.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogReadError {
    #[error("io: {0}")]
    Io(io::Error),
    #[error("json: {0}")]
    Json(serde_json::Error),
}

impl fmt::Display for CueLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_ndjson())
    }
}
