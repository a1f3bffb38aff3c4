//! Deterministic cue engine.
//!
//! The engine walks the script row by row. Each row is entered when its
//! trigger is satisfied (immediately, after a timer, or on an operator
//! signal), its actions are emitted as one batch of device commands, and the
//! row completes once every command has been acknowledged and any wait has
//! elapsed. Time comes from an injected [`Clock`]; the engine never reads a
//! wall clock, so a script plus a timestamped input sequence always yields
//! the same log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Value;
use crate::markup::{compile_ssml, CompiledUtterance};
use crate::script::{
    validate_script, Action, ActionKind, CueRow, LightPattern, Rgb, RowPos, ShowScript, Trigger, POINTS_VAR,
};

mod log;
mod replay;

pub use log::{CueLog, CueLogEntry, Disposition, EntryKind, LogPayload, LogReadError};
pub use replay::{replay, replay_against, ReplayError};

/// Source of logical time in milliseconds since show start.
pub trait Clock: Send {
    fn now_ms(&self) -> u64;
}

/// A clock moved by hand. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// `(batch sequence number, index within the batch)`; on the wire `"seq.sub"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CommandId {
    pub seq: u64,
    pub sub: u32,
}

impl std::str::FromStr for CommandId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (seq, sub) = s.split_once('.').ok_or_else(|| format!("`{s}` is not seq.sub"))?;
        Ok(CommandId {
            seq: seq.parse().map_err(|_| format!("bad sequence number in `{s}`"))?,
            sub: sub.parse().map_err(|_| format!("bad sub index in `{s}`"))?,
        })
    }
}

impl Serialize for CommandId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommandId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl CommandId {
    pub fn new(seq: u64, sub: u32) -> Self {
        CommandId { seq, sub }
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.seq, self.sub)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum EngineInput {
    OperatorSignal { name: String },
    PlayerChoice { choice_id: String },
    DeviceAck { command_id: CommandId },
    TimerFired { row_id: String },
    RepairCommand { macro_id: String, args: Vec<String> },
    DeviceLost { device_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedInput {
    pub at: u64,
    pub input: EngineInput,
}

/// Wire form of an action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CommandBody {
    Speak {
        voice: String,
        utterance: CompiledUtterance,
        /// Character-weighted speech rate delta, percent.
        rate_percent: i32,
    },
    PlayGesture {
        gesture_ref: String,
    },
    Light {
        color: Rgb,
        pattern: LightPattern,
        brightness: f64,
    },
    Sound {
        clip_ref: String,
        looped: bool,
        gain: f64,
    },
    Video {
        asset_ref: String,
    },
    GuiShow {
        screen_ref: String,
        payload: BTreeMap<String, String>,
    },
    PuppetPlayback {
        clip_ref: String,
    },
    Gaze {
        target: String,
    },
}

impl CommandBody {
    pub fn kind(&self) -> ActionKind {
        match self {
            CommandBody::Speak { .. } => ActionKind::Speak,
            CommandBody::PlayGesture { .. } => ActionKind::Gesture,
            CommandBody::Light { .. } => ActionKind::Light,
            CommandBody::Sound { .. } => ActionKind::Sound,
            CommandBody::Video { .. } => ActionKind::Video,
            CommandBody::GuiShow { .. } => ActionKind::Gui,
            CommandBody::PuppetPlayback { .. } => ActionKind::Puppet,
            CommandBody::Gaze { .. } => ActionKind::Gaze,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCommand {
    pub command_id: CommandId,
    pub target: String,
    /// Row that produced the command; `None` for repairs.
    pub row_id: Option<String>,
    pub body: CommandBody,
    pub expects_ack: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingTimer {
        row_id: String,
    },
    AwaitingGate {
        signal: String,
    },
    AwaitingAcks {
        /// Outstanding commands and their target devices.
        pending: BTreeMap<CommandId, String>,
        /// Row whose wait has not elapsed yet.
        timer: Option<String>,
    },
    AwaitingChoice {
        row_id: String,
    },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerRequest {
    pub row_id: String,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub pc: RowPos,
    pub vars: BTreeMap<String, Value>,
    pub points: i64,
    pub phase: Phase,
    /// Next command batch number.
    pub seq: u64,
    /// Size of every issued batch, by sequence number.
    issued: BTreeMap<u64, u32>,
    buffered_acks: BTreeSet<CommandId>,
    /// Last steady-state ambience per device: lights and looped sounds.
    lights: BTreeMap<String, CommandBody>,
    loops: BTreeMap<String, CommandBody>,
    last_utterance: BTreeMap<String, CommandBody>,
}

impl EngineState {
    fn new(script: &ShowScript) -> Self {
        EngineState {
            pc: (0, 0),
            vars: script.initial_vars(),
            points: 0,
            phase: Phase::Idle,
            seq: 0,
            issued: BTreeMap::new(),
            buffered_acks: BTreeSet::new(),
            lights: BTreeMap::new(),
            loops: BTreeMap::new(),
            last_utterance: BTreeMap::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Steady-state ambience currently in effect, lights first, by device id.
    pub fn ambience(&self) -> Vec<(&str, &CommandBody)> {
        self.lights
            .iter()
            .chain(self.loops.iter())
            .map(|(d, b)| (d.as_str(), b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("script is not runnable: {0}")]
    InvalidScript(String),
    #[error("show has finished")]
    Finished,
    #[error("signal `{0}` is not used by any gate in the script")]
    UnknownSignal(String),
    #[error("`{0}` is not an option of the current branch")]
    UnknownChoice(String),
    #[error("no command {0} was ever issued")]
    AckForUnknownCommand(CommandId),
    #[error("unknown repair macro `{0}`")]
    UnknownMacro(String),
    #[error("{0} has not spoken yet")]
    NoUtteranceToRepeat(String),
    #[error("bad repair arguments: {0}")]
    BadRepairArgs(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidScript(_) => "InvalidScript",
            EngineError::Finished => "Finished",
            EngineError::UnknownSignal(_) => "UnknownSignal",
            EngineError::UnknownChoice(_) => "UnknownChoice",
            EngineError::AckForUnknownCommand(_) => "AckForUnknownCommand",
            EngineError::UnknownMacro(_) => "UnknownMacro",
            EngineError::NoUtteranceToRepeat(_) => "NoUtteranceToRepeat",
            EngineError::BadRepairArgs(_) => "BadRepairArgs",
        }
    }
}

/// Everything one engine transition produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub commands: Vec<DeviceCommand>,
    pub timers: Vec<TimerRequest>,
    pub log: Vec<CueLogEntry>,
}

pub const REPAIR_MACROS: [&str; 3] = ["redirect_gaze", "repeat_last_utterance", "resync_scene"];

enum Flow {
    Wait,
    Continue(RowPos),
    End,
}

pub struct Engine {
    script: Arc<ShowScript>,
    state: EngineState,
    log: CueLog,
    clock: Box<dyn Clock>,
    signals: BTreeSet<String>,
    last_time: u64,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("title", &self.script.title)
            .field("state", &self.state)
            .field("log_len", &self.log.len())
            .finish()
    }
}

impl Engine {
    /// Validates the script, enters its first row and returns the initial output.
    pub fn start(script: impl Into<Arc<ShowScript>>, clock: impl Clock + 'static) -> Result<(Engine, StepOutput), EngineError> {
        let script = script.into();
        if script.row_count() == 0 {
            return Err(EngineError::InvalidScript("script has no scenes".into()));
        }
        let errors: Vec<String> = validate_script(&script)
            .into_iter()
            .filter(|d| d.is_error())
            .map(|d| d.to_string())
            .collect();
        if !errors.is_empty() {
            return Err(EngineError::InvalidScript(errors.join("; ")));
        }
        let signals = script.signals().into_iter().map(str::to_string).collect();
        let state = EngineState::new(&script);
        let mut engine = Engine {
            last_time: clock.now_ms(),
            script,
            state,
            log: CueLog::new(),
            clock: Box::new(clock),
            signals,
        };
        let mut out = StepOutput::default();
        engine.emit(
            &mut out,
            LogPayload::Started {
                title: engine.script.title.clone(),
                rows: engine.script.row_count(),
            },
        );
        let first = engine.script.first_pos().expect("non-empty script");
        engine.drive(Flow::Continue(first), &mut out);
        Ok((engine, out))
    }

    pub fn script(&self) -> &ShowScript {
        &self.script
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn log(&self) -> &CueLog {
        &self.log
    }

    pub fn into_log(self) -> CueLog {
        self.log
    }

    pub fn current_row(&self) -> Option<&CueRow> {
        self.script.row_at(self.state.pc)
    }

    /// Processes one input. Rejected inputs are still logged so a replay
    /// reproduces them.
    pub fn step(&mut self, input: EngineInput) -> Result<StepOutput, EngineError> {
        self.tick();
        let mut out = StepOutput::default();
        let is_repair = matches!(input, EngineInput::RepairCommand { .. });
        if self.state.is_done() && !is_repair {
            return Err(EngineError::Finished);
        }
        match self.apply(&input, &mut out) {
            Ok(()) => Ok(out),
            Err(e) => {
                self.emit(
                    &mut out,
                    LogPayload::Input {
                        input,
                        disposition: Disposition::Rejected { error: e.to_string() },
                    },
                );
                Err(e)
            }
        }
    }

    /// Runs a repair macro out of band; the cue position does not move.
    pub fn repair(&mut self, macro_id: &str, args: &[String]) -> Result<StepOutput, EngineError> {
        self.step(EngineInput::RepairCommand {
            macro_id: macro_id.to_string(),
            args: args.to_vec(),
        })
    }

    fn tick(&mut self) {
        // logical time never runs backwards in the log
        self.last_time = self.last_time.max(self.clock.now_ms());
    }

    fn emit(&mut self, out: &mut StepOutput, payload: LogPayload) {
        let entry = CueLogEntry::new(self.last_time, payload);
        self.log.push(entry.clone());
        out.log.push(entry);
    }

    fn accept(&mut self, out: &mut StepOutput, input: &EngineInput) {
        self.emit(
            out,
            LogPayload::Input {
                input: input.clone(),
                disposition: Disposition::Applied,
            },
        );
    }

    fn ignore(&mut self, out: &mut StepOutput, input: &EngineInput, reason: impl Into<String>) {
        self.emit(
            out,
            LogPayload::Input {
                input: input.clone(),
                disposition: Disposition::Ignored { reason: reason.into() },
            },
        );
    }

    fn set_phase(&mut self, out: &mut StepOutput, phase: Phase) {
        self.state.phase = phase.clone();
        self.emit(out, LogPayload::PhaseChanged { phase });
    }

    fn apply(&mut self, input: &EngineInput, out: &mut StepOutput) -> Result<(), EngineError> {
        match input {
            EngineInput::OperatorSignal { name } => {
                if !self.signals.contains(name) {
                    return Err(EngineError::UnknownSignal(name.clone()));
                }
                match &self.state.phase {
                    Phase::AwaitingGate { signal } if signal == name => {
                        self.accept(out, input);
                        let flow = self.fire_row(self.state.pc, out);
                        self.drive(flow, out);
                    }
                    _ => self.ignore(out, input, "not awaiting this signal"),
                }
            }
            EngineInput::PlayerChoice { choice_id } => match &self.state.phase {
                Phase::AwaitingChoice { row_id } => {
                    let row_id = row_id.clone();
                    let option = self
                        .script
                        .row(&row_id)
                        .and_then(|r| r.branch.as_ref())
                        .and_then(|b| b.option(choice_id))
                        .cloned()
                        .ok_or_else(|| EngineError::UnknownChoice(choice_id.clone()))?;
                    self.accept(out, input);
                    self.emit(
                        out,
                        LogPayload::ChoiceTaken {
                            row_id,
                            choice_id: option.choice_id.clone(),
                            points: option.points,
                        },
                    );
                    self.add_points(option.points, &format!("choice {}", option.choice_id), out);
                    let target = self
                        .script
                        .position_of(&option.target_row_id)
                        .expect("validated branch target");
                    self.drive(Flow::Continue(target), out);
                }
                _ => self.ignore(out, input, "no branch is waiting for a choice"),
            },
            EngineInput::DeviceAck { command_id } => {
                let id = *command_id;
                match self.state.issued.get(&id.seq) {
                    Some(&n) if id.sub >= n => return Err(EngineError::AckForUnknownCommand(id)),
                    Some(_) => {
                        let completed = match &mut self.state.phase {
                            Phase::AwaitingAcks { pending, timer } => {
                                pending.remove(&id).map(|_| pending.is_empty() && timer.is_none())
                            }
                            _ => None,
                        };
                        match completed {
                            Some(done) => {
                                self.accept(out, input);
                                if done {
                                    let flow = self.complete_row(self.state.pc, out);
                                    self.drive(flow, out);
                                }
                            }
                            None => self.ignore(out, input, "command is not awaiting an ack"),
                        }
                    }
                    None if id.seq >= self.state.seq => {
                        self.state.buffered_acks.insert(id);
                        self.emit(
                            out,
                            LogPayload::Input {
                                input: input.clone(),
                                disposition: Disposition::Buffered,
                            },
                        );
                    }
                    None => return Err(EngineError::AckForUnknownCommand(id)),
                }
            }
            EngineInput::TimerFired { row_id } => match &mut self.state.phase {
                Phase::AwaitingTimer { row_id: r } if r == row_id => {
                    self.accept(out, input);
                    let flow = self.fire_row(self.state.pc, out);
                    self.drive(flow, out);
                }
                Phase::AwaitingAcks { pending, timer } if timer.as_deref() == Some(row_id.as_str()) => {
                    *timer = None;
                    let done = pending.is_empty();
                    self.accept(out, input);
                    if done {
                        let flow = self.complete_row(self.state.pc, out);
                        self.drive(flow, out);
                    }
                }
                _ => self.ignore(out, input, "no timer pending for this row"),
            },
            EngineInput::DeviceLost { device_id } => {
                self.accept(out, input);
                let mut abandoned = Vec::new();
                let mut done = false;
                if let Phase::AwaitingAcks { pending, timer } = &mut self.state.phase {
                    pending.retain(|id, target| {
                        let lost = target == device_id;
                        if lost {
                            abandoned.push(*id);
                        }
                        !lost
                    });
                    done = !abandoned.is_empty() && pending.is_empty() && timer.is_none();
                }
                if !abandoned.is_empty() {
                    self.emit(
                        out,
                        LogPayload::CommandsAbandoned {
                            device_id: device_id.clone(),
                            command_ids: abandoned,
                        },
                    );
                }
                if done {
                    let flow = self.complete_row(self.state.pc, out);
                    self.drive(flow, out);
                }
            }
            EngineInput::RepairCommand { macro_id, args } => {
                let bodies = self.repair_bodies(macro_id, args)?;
                self.accept(out, input);
                self.emit(
                    out,
                    LogPayload::Repair {
                        macro_id: macro_id.clone(),
                        args: args.clone(),
                    },
                );
                if !bodies.is_empty() {
                    let seq = self.state.seq;
                    self.state.seq += 1;
                    self.state.issued.insert(seq, bodies.len() as u32);
                    for (sub, (target, body)) in bodies.into_iter().enumerate() {
                        let cmd = DeviceCommand {
                            command_id: CommandId::new(seq, sub as u32),
                            target,
                            row_id: None,
                            body,
                            expects_ack: false,
                        };
                        self.emit(out, LogPayload::Command { command: cmd.clone() });
                        out.commands.push(cmd);
                    }
                    self.discard_stale_buffered(seq);
                }
            }
        }
        Ok(())
    }

    fn repair_bodies(&self, macro_id: &str, args: &[String]) -> Result<Vec<(String, CommandBody)>, EngineError> {
        let actor = |args: &[String]| -> Result<String, EngineError> {
            let a = args
                .first()
                .ok_or_else(|| EngineError::BadRepairArgs(format!("{macro_id} needs an actor")))?;
            match self.script.device(a) {
                Some(d) if d.role.accepts(ActionKind::Gaze) => Ok(a.clone()),
                _ => Err(EngineError::BadRepairArgs(format!("`{a}` is not a robot actor"))),
            }
        };
        match macro_id {
            "redirect_gaze" => {
                let a = actor(args)?;
                let target = args.get(1).cloned().unwrap_or_else(|| "player".to_string());
                Ok(vec![(a, CommandBody::Gaze { target })])
            }
            "repeat_last_utterance" => {
                let a = actor(args)?;
                let body = self
                    .state
                    .last_utterance
                    .get(&a)
                    .cloned()
                    .ok_or_else(|| EngineError::NoUtteranceToRepeat(a.clone()))?;
                Ok(vec![(a, body)])
            }
            "resync_scene" => Ok(self
                .state
                .ambience()
                .into_iter()
                .map(|(d, b)| (d.to_string(), b.clone()))
                .collect()),
            other => Err(EngineError::UnknownMacro(other.to_string())),
        }
    }

    fn add_points(&mut self, amount: i64, reason: &str, out: &mut StepOutput) {
        // validation rejects negative amounts; never let the total fall
        let from = self.state.points;
        let to = from.saturating_add(amount.max(0));
        self.state.points = to;
        self.state.vars.insert(POINTS_VAR.to_string(), Value::Int(to));
        self.emit(
            out,
            LogPayload::PointsChanged {
                from,
                to,
                reason: reason.to_string(),
            },
        );
    }

    fn drive(&mut self, mut flow: Flow, out: &mut StepOutput) {
        loop {
            match flow {
                Flow::Wait => return,
                Flow::Continue(pos) => flow = self.enter_row(pos, out),
                Flow::End => {
                    self.set_phase(out, Phase::Done);
                    let points = self.state.points;
                    self.emit(out, LogPayload::Finished { points });
                    return;
                }
            }
        }
    }

    fn next_flow(&self, pos: RowPos) -> Flow {
        match self.script.next_pos(pos) {
            Some(p) => Flow::Continue(p),
            None => Flow::End,
        }
    }

    fn enter_row(&mut self, pos: RowPos, out: &mut StepOutput) -> Flow {
        let script = Arc::clone(&self.script);
        let row = script.row_at(pos).expect("valid position");
        self.state.pc = pos;
        if let Some(guard) = &row.guard {
            if guard.eval(&self.state.vars) != Ok(Value::Bool(true)) {
                self.emit(out, LogPayload::RowSkipped { row_id: row.id.clone() });
                return self.next_flow(pos);
            }
        }
        self.emit(out, LogPayload::RowEntered { row_id: row.id.clone() });
        match &row.trigger {
            Trigger::Auto | Trigger::AfterPrevDelay(0) => self.fire_row(pos, out),
            Trigger::AfterPrevDelay(ms) => {
                let req = TimerRequest {
                    row_id: row.id.clone(),
                    delay_ms: *ms,
                };
                self.emit(
                    out,
                    LogPayload::TimerRequested {
                        row_id: req.row_id.clone(),
                        delay_ms: req.delay_ms,
                    },
                );
                out.timers.push(req);
                self.set_phase(out, Phase::AwaitingTimer { row_id: row.id.clone() });
                Flow::Wait
            }
            Trigger::OperatorGate(signal) => {
                self.set_phase(out, Phase::AwaitingGate { signal: signal.clone() });
                Flow::Wait
            }
        }
    }

    fn render(&self, action: &Action) -> Option<CommandBody> {
        Some(match action {
            Action::Speak {
                markup,
                voice,
                default_style,
                ..
            } => CommandBody::Speak {
                voice: voice.clone(),
                utterance: compile_ssml(markup, voice, *default_style),
                rate_percent: markup.mean_rate_percent(),
            },
            Action::PlayGesture { gesture_ref, .. } => CommandBody::PlayGesture {
                gesture_ref: gesture_ref.clone(),
            },
            Action::Light {
                color,
                pattern,
                brightness,
                ..
            } => CommandBody::Light {
                color: *color,
                pattern: *pattern,
                brightness: *brightness,
            },
            Action::Sound {
                clip_ref, looped, gain, ..
            } => CommandBody::Sound {
                clip_ref: clip_ref.clone(),
                looped: *looped,
                gain: *gain,
            },
            Action::Video { asset_ref, .. } => CommandBody::Video {
                asset_ref: asset_ref.clone(),
            },
            Action::GuiShow {
                screen_ref, payload, ..
            } => CommandBody::GuiShow {
                screen_ref: screen_ref.clone(),
                payload: payload.clone(),
            },
            Action::PuppetPlayback { clip_ref, .. } => CommandBody::PuppetPlayback {
                clip_ref: clip_ref.clone(),
            },
            Action::SetVar { .. } | Action::AwardPoints { .. } | Action::WaitMs { .. } => return None,
        })
    }

    fn fire_row(&mut self, pos: RowPos, out: &mut StepOutput) -> Flow {
        let script = Arc::clone(&self.script);
        let row = script.row_at(pos).expect("valid position");
        self.emit(out, LogPayload::RowFired { row_id: row.id.clone() });

        let seq = self.state.seq;
        let mut sub = 0u32;
        let mut wait: Option<u64> = None;
        let mut pending = BTreeMap::new();
        for action in &row.actions {
            match action {
                Action::SetVar { name, expression } => {
                    if let Ok(value) = expression.eval(&self.state.vars) {
                        self.state.vars.insert(name.clone(), value.clone());
                        self.emit(out, LogPayload::VarSet { name: name.clone(), value });
                    }
                }
                Action::AwardPoints { amount } => self.add_points(*amount, &format!("award in {}", row.id), out),
                Action::WaitMs { duration } => wait = Some(wait.map_or(*duration, |w| w.max(*duration))),
                _ => {
                    let body = self.render(action).expect("device action");
                    let target = action.device().expect("device action").to_string();
                    match &body {
                        CommandBody::Light { .. } => {
                            self.state.lights.insert(target.clone(), body.clone());
                        }
                        CommandBody::Sound { looped: true, .. } => {
                            self.state.loops.insert(target.clone(), body.clone());
                        }
                        CommandBody::Speak { .. } => {
                            self.state.last_utterance.insert(target.clone(), body.clone());
                        }
                        _ => {}
                    }
                    let cmd = DeviceCommand {
                        command_id: CommandId::new(seq, sub),
                        target: target.clone(),
                        row_id: Some(row.id.clone()),
                        body,
                        expects_ack: true,
                    };
                    sub += 1;
                    pending.insert(cmd.command_id, target);
                    self.emit(out, LogPayload::Command { command: cmd.clone() });
                    out.commands.push(cmd);
                }
            }
        }
        if sub > 0 {
            self.state.issued.insert(seq, sub);
            self.state.seq += 1;
            let early: Vec<CommandId> = self
                .state
                .buffered_acks
                .iter()
                .copied()
                .filter(|id| pending.contains_key(id))
                .collect();
            for id in early {
                self.state.buffered_acks.remove(&id);
                pending.remove(&id);
                self.emit(out, LogPayload::BufferedAckApplied { command_id: id });
            }
            self.discard_stale_buffered(seq);
        }
        let timer = wait.filter(|&w| w > 0).map(|delay_ms| {
            let req = TimerRequest {
                row_id: row.id.clone(),
                delay_ms,
            };
            self.emit(
                out,
                LogPayload::TimerRequested {
                    row_id: req.row_id.clone(),
                    delay_ms,
                },
            );
            out.timers.push(req);
            row.id.clone()
        });
        if pending.is_empty() && timer.is_none() {
            return self.complete_row(pos, out);
        }
        self.set_phase(out, Phase::AwaitingAcks { pending, timer });
        Flow::Wait
    }

    /// Buffered acks for an issued batch that name a sub index it never had.
    fn discard_stale_buffered(&mut self, seq: u64) {
        self.state.buffered_acks.retain(|id| id.seq != seq);
    }

    fn complete_row(&mut self, pos: RowPos, out: &mut StepOutput) -> Flow {
        let script = Arc::clone(&self.script);
        let row = script.row_at(pos).expect("valid position");
        self.emit(out, LogPayload::RowCompleted { row_id: row.id.clone() });
        if row.branch.is_some() {
            self.set_phase(out, Phase::AwaitingChoice { row_id: row.id.clone() });
            return Flow::Wait;
        }
        self.next_flow(pos)
    }
}
