//! Row-oriented show scripts.
//!
//! A script is a UTF-8 tab-separated file (`.ssync.tsv`). See
//! `docs/script-format.md` for the full grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Value};
use crate::markup::{DialogueMarkup, Style};

mod parse;
mod registry;
mod validate;

pub use parse::{parse_script, serialize_script, ParseError, ParseErrorCode, ParseErrorList, HEADER};
pub use registry::{load_gesture_registry, GestureRegistry, RegisteredGesture, RegistryError};
pub use validate::{validate_script, Diagnostic, DiagnosticCode, Severity};

pub const DEFAULT_VOICE: &str = "default";
pub const MAX_PULSE_HZ: f64 = 20.0;
pub const CLIP_FILE_SUFFIX: &str = ".gesture.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    RobotActor,
    Light,
    Audio,
    Screen,
    Prop,
}

impl DeviceRole {
    pub const ALL: [DeviceRole; 5] = [
        DeviceRole::RobotActor,
        DeviceRole::Light,
        DeviceRole::Audio,
        DeviceRole::Screen,
        DeviceRole::Prop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceRole::RobotActor => "robot_actor",
            DeviceRole::Light => "light",
            DeviceRole::Audio => "audio",
            DeviceRole::Screen => "screen",
            DeviceRole::Prop => "prop",
        }
    }

    /// Every action kind a device of this role can physically perform.
    pub fn accepted_kinds(self) -> &'static [ActionKind] {
        use ActionKind::*;
        match self {
            DeviceRole::RobotActor => &[Speak, Gesture, Puppet, Gaze],
            DeviceRole::Light => &[Light],
            DeviceRole::Audio => &[Sound],
            DeviceRole::Screen => &[Video, Gui, Sound],
            DeviceRole::Prop => &[Light, Sound, Gui],
        }
    }

    pub fn accepts(self, kind: ActionKind) -> bool {
        self.accepted_kinds().contains(&kind)
    }
}

impl fmt::Display for DeviceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceRole {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceRole::ALL.iter().copied().find(|r| r.as_str() == s).ok_or(())
    }
}

/// Action kinds as written in the `action_kind` column. `Gaze` is only
/// produced by repair macros and cannot be scripted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Speak,
    Gesture,
    Light,
    Sound,
    Video,
    Gui,
    Set,
    Award,
    Puppet,
    Wait,
    Gaze,
}

impl ActionKind {
    pub const SCRIPTABLE: [ActionKind; 10] = [
        ActionKind::Speak,
        ActionKind::Gesture,
        ActionKind::Light,
        ActionKind::Sound,
        ActionKind::Video,
        ActionKind::Gui,
        ActionKind::Set,
        ActionKind::Award,
        ActionKind::Puppet,
        ActionKind::Wait,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Speak => "speak",
            ActionKind::Gesture => "gesture",
            ActionKind::Light => "light",
            ActionKind::Sound => "sound",
            ActionKind::Video => "video",
            ActionKind::Gui => "gui",
            ActionKind::Set => "set",
            ActionKind::Award => "award",
            ActionKind::Puppet => "puppet",
            ActionKind::Wait => "wait",
            ActionKind::Gaze => "gaze",
        }
    }

    /// Kinds handled by the engine itself rather than a device.
    pub fn is_device_directed(self) -> bool {
        !matches!(self, ActionKind::Set | ActionKind::Award | ActionKind::Wait)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::SCRIPTABLE
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceDecl {
    pub id: String,
    pub role: DeviceRole,
    pub capabilities: BTreeSet<ActionKind>,
}

impl DeviceDecl {
    /// Declares a device with every capability its role allows.
    pub fn new(id: impl Into<String>, role: DeviceRole) -> Self {
        DeviceDecl {
            id: id.into(),
            role,
            capabilities: role.accepted_kinds().iter().copied().collect(),
        }
    }

    pub fn accepts(&self, kind: ActionKind) -> bool {
        self.role.accepts(kind) && self.capabilities.contains(&kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub initial: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureSource {
    BuiltinLibrary,
    CapturedClip(String),
}

/// A gesture as the author annotated it. The library `label` says what the
/// gesture is called; `context_note` says what it is used to convey here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureEntry {
    pub id: String,
    pub label: String,
    pub context_note: String,
    pub source: GestureSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub rows: Vec<CueRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "arg", rename_all = "snake_case")]
pub enum Trigger {
    Auto,
    AfterPrevDelay(u64),
    OperatorGate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueRow {
    pub id: String,
    pub trigger: Trigger,
    pub actions: Vec<Action>,
    pub branch: Option<BranchSpec>,
    pub guard: Option<Expr>,
}

/// Serialized as `#rrggbb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("`{s}` is not a colour")))
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

impl FromStr for Rgb {
    type Err = ();

    /// Accepts `#rrggbb` or `r,g,b` with components 0..=255.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(hex) = s.strip_prefix('#') {
            if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(());
            }
            let c = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| ());
            return Ok(Rgb(c(0)?, c(2)?, c(4)?));
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [r, g, b] => Ok(Rgb(
                r.parse().map_err(|_| ())?,
                g.parse().map_err(|_| ())?,
                b.parse().map_err(|_| ())?,
            )),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum LightPattern {
    Steady,
    Pulse { rate_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Speak {
        actor: String,
        markup: DialogueMarkup,
        voice: String,
        default_style: Option<Style>,
    },
    PlayGesture {
        actor: String,
        gesture_ref: String,
    },
    Light {
        device: String,
        color: Rgb,
        pattern: LightPattern,
        brightness: f64,
    },
    Sound {
        device: String,
        clip_ref: String,
        looped: bool,
        gain: f64,
    },
    Video {
        device: String,
        asset_ref: String,
    },
    GuiShow {
        device: String,
        screen_ref: String,
        payload: BTreeMap<String, String>,
    },
    SetVar {
        name: String,
        expression: Expr,
    },
    AwardPoints {
        amount: i64,
    },
    PuppetPlayback {
        actor: String,
        clip_ref: String,
    },
    WaitMs {
        duration: u64,
    },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Speak { .. } => ActionKind::Speak,
            Action::PlayGesture { .. } => ActionKind::Gesture,
            Action::Light { .. } => ActionKind::Light,
            Action::Sound { .. } => ActionKind::Sound,
            Action::Video { .. } => ActionKind::Video,
            Action::GuiShow { .. } => ActionKind::Gui,
            Action::SetVar { .. } => ActionKind::Set,
            Action::AwardPoints { .. } => ActionKind::Award,
            Action::PuppetPlayback { .. } => ActionKind::Puppet,
            Action::WaitMs { .. } => ActionKind::Wait,
        }
    }

    /// The device this action is addressed to, if any.
    pub fn device(&self) -> Option<&str> {
        match self {
            Action::Speak { actor, .. }
            | Action::PlayGesture { actor, .. }
            | Action::PuppetPlayback { actor, .. } => Some(actor),
            Action::Light { device, .. }
            | Action::Sound { device, .. }
            | Action::Video { device, .. }
            | Action::GuiShow { device, .. } => Some(device),
            Action::SetVar { .. } | Action::AwardPoints { .. } | Action::WaitMs { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchOption {
    pub choice_id: String,
    pub label: String,
    pub points: i64,
    pub target_row_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub prompt: String,
    pub options: Vec<BranchOption>,
}

impl BranchSpec {
    pub fn option(&self, choice_id: &str) -> Option<&BranchOption> {
        self.options.iter().find(|o| o.choice_id == choice_id)
    }
}

/// Position of a row: (scene index, row index within the scene).
pub type RowPos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShowScript {
    pub title: String,
    pub devices: Vec<DeviceDecl>,
    pub variables: Vec<VarDecl>,
    pub gestures: Vec<GestureEntry>,
    pub scenes: Vec<Scene>,
}

impl ShowScript {
    pub fn device(&self, id: &str) -> Option<&DeviceDecl> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn gesture(&self, id: &str) -> Option<&GestureEntry> {
        self.gestures.iter().find(|g| g.id == id)
    }

    pub fn variable(&self, name: &str) -> Option<&VarDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// All rows in show order with their positions.
    pub fn rows(&self) -> impl Iterator<Item = (RowPos, &CueRow)> {
        self.scenes
            .iter()
            .enumerate()
            .flat_map(|(si, s)| s.rows.iter().enumerate().map(move |(ri, r)| ((si, ri), r)))
    }

    pub fn row_count(&self) -> usize {
        self.scenes.iter().map(|s| s.rows.len()).sum()
    }

    pub fn row_at(&self, pos: RowPos) -> Option<&CueRow> {
        self.scenes.get(pos.0)?.rows.get(pos.1)
    }

    pub fn position_of(&self, row_id: &str) -> Option<RowPos> {
        self.rows().find(|(_, r)| r.id == row_id).map(|(p, _)| p)
    }

    pub fn row(&self, row_id: &str) -> Option<&CueRow> {
        self.rows().find(|(_, r)| r.id == row_id).map(|(_, r)| r)
    }

    /// The position following `pos` in sequential flow, crossing scene boundaries.
    pub fn next_pos(&self, pos: RowPos) -> Option<RowPos> {
        let (mut si, mut ri) = (pos.0, pos.1 + 1);
        while si < self.scenes.len() {
            if ri < self.scenes[si].rows.len() {
                return Some((si, ri));
            }
            si += 1;
            ri = 0;
        }
        None
    }

    pub fn first_pos(&self) -> Option<RowPos> {
        self.rows().next().map(|(p, _)| p)
    }

    /// Every operator gate signal named anywhere in the script.
    pub fn signals(&self) -> BTreeSet<&str> {
        self.rows()
            .filter_map(|(_, r)| match &r.trigger {
                Trigger::OperatorGate(s) => Some(s.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Initial variable store, including the read-only `points` counter.
    pub fn initial_vars(&self) -> BTreeMap<String, Value> {
        let mut vars: BTreeMap<String, Value> = self
            .variables
            .iter()
            .map(|v| (v.name.clone(), v.initial.clone()))
            .collect();
        vars.insert(POINTS_VAR.to_string(), Value::Int(0));
        vars
    }
}

/// Built-in, read-only variable mirroring the engine's point total.
pub const POINTS_VAR: &str = "points";

/// True for gesture references that name a clip file directly.
pub fn is_clip_file_ref(r: &str) -> bool {
    r.ends_with(CLIP_FILE_SUFFIX)
}
