use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::*;
use crate::expr::{self, Value};
use crate::markup::{self, Style};

/// The fixed column header of a script file.
pub const HEADER: [&str; 7] = [
    "row_id",
    "scene_id",
    "trigger",
    "action_kind",
    "device",
    "payload",
    "branch",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorCode {
    MissingHeader,
    UnknownActionKind,
    BadColor,
    BadTrigger,
    DuplicateId,
    MalformedExpression,
    MalformedMarkup,
    BadValue,
    BadBranch,
    BadDirective,
    ConflictingRowFields,
    EmptyRow,
    TooManyColumns,
}

impl fmt::Display for ParseErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {code}: {message}")]
pub struct ParseError {
    /// 1-based line number in the source file.
    pub line: usize,
    pub column: &'static str,
    pub code: ParseErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseErrorList(pub Vec<ParseError>);

impl ParseErrorList {
    pub fn iter(&self) -> impl Iterator<Item = &ParseError> {
        self.0.iter()
    }

    pub fn has(&self, code: ParseErrorCode) -> bool {
        self.0.iter().any(|e| e.code == code)
    }
}

impl fmt::Display for ParseErrorList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

struct Ctx {
    errors: Vec<ParseError>,
}

impl Ctx {
    fn err(&mut self, line: usize, column: &'static str, code: ParseErrorCode, message: impl Into<String>) {
        self.errors.push(ParseError {
            line,
            column,
            code,
            message: message.into(),
        });
    }
}

struct PendingRow {
    line: usize,
    scene_id: String,
    row: CueRow,
    action_failed: bool,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

fn parse_trigger(cell: &str) -> Result<(Trigger, Option<Result<Expr, String>>), String> {
    let (head, guard) = match cell.split_once(" if ") {
        Some((h, g)) => (h.trim(), Some(g.trim())),
        None => (cell.trim(), None),
    };
    let trigger = if head == "auto" {
        Trigger::Auto
    } else if let Some(ms) = head.strip_prefix("after_prev_delay:") {
        Trigger::AfterPrevDelay(
            ms.trim()
                .parse()
                .map_err(|_| format!("`{head}`: delay must be a non-negative integer of milliseconds"))?,
        )
    } else if let Some(sig) = head.strip_prefix("operator_gate:") {
        let sig = sig.trim();
        if sig.is_empty() {
            return Err("operator_gate: is missing a signal name".to_string());
        }
        if !is_ident(sig) {
            return Err(format!("`{sig}` is not a valid signal name"));
        }
        Trigger::OperatorGate(sig.to_string())
    } else {
        return Err(format!(
            "`{head}` is not a trigger; expected auto, after_prev_delay:<ms> or operator_gate:<signal>"
        ));
    };
    let guard = guard.map(|g| expr::parse(g).map_err(|e| e.to_string()));
    Ok((trigger, guard))
}

/// Splits `k=v; k=v` payloads. Keys are trimmed; values keep inner spaces.
fn key_values(payload: &str) -> Result<Vec<(String, String)>, String> {
    payload
        .split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("`{p}` is not a key=value pair"))
        })
        .collect()
}

fn unit_interval(key: &str, v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        _ => Err(format!("{key} must be a number in [0, 1], got `{v}`")),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} must be true or false, got `{v}`")),
    }
}

fn split_speak_options(payload: &str) -> Result<(String, Option<Style>, &str), String> {
    let mut voice = DEFAULT_VOICE.to_string();
    let mut style = None;
    let Some(rest) = payload.strip_prefix('[') else {
        return Ok((voice, style, payload));
    };
    let (opts, text) = rest
        .split_once(']')
        .ok_or_else(|| "speak options block `[` is not closed".to_string())?;
    for opt in opts.split(',').map(str::trim).filter(|o| !o.is_empty()) {
        match opt.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("voice", v)) if !v.is_empty() => voice = v.to_string(),
            Some(("style", s)) => {
                style = Some(s.parse::<Style>().map_err(|_| {
                    format!("unknown style `{s}`; expected one of {}", Style::legal_names().join(", "))
                })?)
            }
            _ => return Err(format!("unknown speak option `{opt}`")),
        }
    }
    Ok((voice, style, text))
}

fn parse_action(
    ctx: &mut Ctx,
    line: usize,
    kind_cell: &str,
    device: &str,
    payload: &str,
) -> Option<Action> {
    use ParseErrorCode::*;
    let Ok(kind) = kind_cell.parse::<ActionKind>() else {
        let legal: Vec<&str> = ActionKind::SCRIPTABLE.iter().map(|k| k.as_str()).collect();
        ctx.err(
            line,
            "action_kind",
            UnknownActionKind,
            format!("`{kind_cell}` is not an action kind; expected one of {}", legal.join(", ")),
        );
        return None;
    };
    if kind.is_device_directed() && device.is_empty() {
        ctx.err(line, "device", BadValue, format!("{kind} needs a device"));
        return None;
    }
    if !kind.is_device_directed() && !device.is_empty() {
        ctx.err(line, "device", BadValue, format!("{kind} does not take a device"));
        return None;
    }
    let device = device.to_string();
    let bad = |ctx: &mut Ctx, code, msg: String| {
        ctx.err(line, "payload", code, msg);
        None
    };
    match kind {
        ActionKind::Speak => {
            let (voice, default_style, text) = match split_speak_options(payload) {
                Ok(v) => v,
                Err(m) => return bad(ctx, BadValue, m),
            };
            match markup::tokenize(text.trim()) {
                Ok(markup) => Some(Action::Speak {
                    actor: device,
                    markup,
                    voice,
                    default_style,
                }),
                Err(e) => bad(ctx, MalformedMarkup, e.to_string()),
            }
        }
        ActionKind::Gesture | ActionKind::Puppet | ActionKind::Video => {
            if payload.is_empty() || payload.chars().any(char::is_whitespace) {
                return bad(ctx, BadValue, format!("{kind} needs a single reference without spaces"));
            }
            let r = payload.to_string();
            Some(match kind {
                ActionKind::Gesture => Action::PlayGesture {
                    actor: device,
                    gesture_ref: r,
                },
                ActionKind::Puppet => Action::PuppetPlayback {
                    actor: device,
                    clip_ref: r,
                },
                _ => Action::Video {
                    device,
                    asset_ref: r,
                },
            })
        }
        ActionKind::Light => {
            let kvs = match key_values(payload) {
                Ok(k) => k,
                Err(m) => return bad(ctx, BadValue, m),
            };
            let mut color = None;
            let mut pattern = LightPattern::Steady;
            let mut brightness = 1.0;
            for (k, v) in kvs {
                match k.as_str() {
                    "color" => match v.parse::<Rgb>() {
                        Ok(c) => color = Some(c),
                        Err(()) => {
                            return bad(ctx, BadColor, format!("`{v}` is not a color; use #rrggbb or r,g,b with 0..=255"))
                        }
                    },
                    "pattern" => {
                        pattern = if v == "steady" {
                            LightPattern::Steady
                        } else if let Some(hz) = v.strip_prefix("pulse:") {
                            match hz.trim().parse::<f64>() {
                                Ok(r) if r > 0.0 && r.is_finite() => LightPattern::Pulse { rate_hz: r },
                                _ => return bad(ctx, BadValue, format!("pulse rate must be a positive number of Hz, got `{hz}`")),
                            }
                        } else {
                            return bad(ctx, BadValue, format!("pattern must be steady or pulse:<hz>, got `{v}`"));
                        }
                    }
                    "brightness" => match unit_interval("brightness", &v) {
                        Ok(b) => brightness = b,
                        Err(m) => return bad(ctx, BadValue, m),
                    },
                    _ => return bad(ctx, BadValue, format!("unknown light key `{k}`")),
                }
            }
            let Some(color) = color else {
                return bad(ctx, BadColor, "light needs color=".to_string());
            };
            Some(Action::Light {
                device,
                color,
                pattern,
                brightness,
            })
        }
        ActionKind::Sound => {
            let kvs = match key_values(payload) {
                Ok(k) => k,
                Err(m) => return bad(ctx, BadValue, m),
            };
            let mut clip = None;
            let mut looped = false;
            let mut gain = 1.0;
            for (k, v) in kvs {
                let r = match k.as_str() {
                    "clip" if !v.is_empty() => {
                        clip = Some(v);
                        Ok(())
                    }
                    "loop" => parse_bool("loop", &v).map(|b| looped = b),
                    "gain" => unit_interval("gain", &v).map(|g| gain = g),
                    _ => Err(format!("unknown or empty sound key `{k}`")),
                };
                if let Err(m) = r {
                    return bad(ctx, BadValue, m);
                }
            }
            let Some(clip_ref) = clip else {
                return bad(ctx, BadValue, "sound needs clip=".to_string());
            };
            Some(Action::Sound {
                device,
                clip_ref,
                looped,
                gain,
            })
        }
        ActionKind::Gui => {
            let kvs = match key_values(payload) {
                Ok(k) => k,
                Err(m) => return bad(ctx, BadValue, m),
            };
            let mut screen = None;
            let mut map = BTreeMap::new();
            for (k, v) in kvs {
                if k == "screen" {
                    screen = Some(v);
                } else if k.is_empty() || map.insert(k.clone(), v).is_some() {
                    return bad(ctx, BadValue, format!("gui key `{k}` is empty or repeated"));
                }
            }
            match screen {
                Some(screen_ref) if !screen_ref.is_empty() => Some(Action::GuiShow {
                    device,
                    screen_ref,
                    payload: map,
                }),
                _ => bad(ctx, BadValue, "gui needs screen=".to_string()),
            }
        }
        ActionKind::Set => {
            let split = find_assignment(payload);
            let Some((name, rhs)) = split else {
                return bad(ctx, MalformedExpression, format!("`{payload}` is not `name = expression`"));
            };
            if !is_ident(name) {
                return bad(ctx, MalformedExpression, format!("`{name}` is not a variable name"));
            }
            match expr::parse(rhs) {
                Ok(expression) => Some(Action::SetVar {
                    name: name.to_string(),
                    expression,
                }),
                Err(e) => bad(ctx, MalformedExpression, e.to_string()),
            }
        }
        ActionKind::Award => match payload.trim().parse::<i64>() {
            Ok(amount) => Some(Action::AwardPoints { amount }),
            Err(_) => bad(ctx, BadValue, format!("award amount must be an integer, got `{payload}`")),
        },
        ActionKind::Wait => match payload.trim().parse::<u64>() {
            Ok(duration) => Some(Action::WaitMs { duration }),
            Err(_) => bad(ctx, BadValue, format!("wait needs a non-negative integer of ms, got `{payload}`")),
        },
        ActionKind::Gaze => unreachable!("gaze is not scriptable"),
    }
}

/// Finds the `=` of `name = expr`, skipping `==` and `!=`.
fn find_assignment(s: &str) -> Option<(&str, &str)> {
    let b = s.as_bytes();
    (0..b.len())
        .find(|&i| b[i] == b'=' && b.get(i + 1) != Some(&b'=') && (i == 0 || !matches!(b[i - 1], b'=' | b'!')))
        .map(|i| (s[..i].trim(), s[i + 1..].trim()))
}

fn parse_branch(cell: &str) -> Result<BranchSpec, String> {
    let mut parts = cell.split('|');
    let prompt = parts.next().unwrap_or_default().trim().to_string();
    let mut options = Vec::new();
    let mut seen = BTreeSet::new();
    for part in parts {
        let fields: Vec<&str> = part.splitn(4, ':').collect();
        let [choice_id, points, target, label] = fields.as_slice() else {
            return Err(format!("option `{part}` must be choice_id:points:target_row:label"));
        };
        let choice_id = choice_id.trim();
        if !is_ident(choice_id) {
            return Err(format!("`{choice_id}` is not a valid choice id"));
        }
        if !seen.insert(choice_id.to_string()) {
            return Err(format!("duplicate choice id `{choice_id}`"));
        }
        let points = points
            .trim()
            .parse()
            .map_err(|_| format!("points `{points}` is not an integer"))?;
        let target = target.trim();
        if target.is_empty() {
            return Err(format!("option `{choice_id}` has no target row"));
        }
        options.push(BranchOption {
            choice_id: choice_id.to_string(),
            label: label.trim().to_string(),
            points,
            target_row_id: target.to_string(),
        });
    }
    if options.is_empty() {
        return Err("branch needs at least one option".to_string());
    }
    Ok(BranchSpec { prompt, options })
}

fn parse_directive(ctx: &mut Ctx, line: usize, cells: &[&str], script: &mut ShowScript) {
    use ParseErrorCode::*;
    let field = |i: usize| cells.get(i).map(|c| c.trim()).unwrap_or("");
    match field(0) {
        "@title" => script.title = field(1).to_string(),
        "@device" => {
            let id = field(1);
            if !is_ident(id) {
                return ctx.err(line, "device", BadDirective, format!("`{id}` is not a device id"));
            }
            let Ok(role) = field(2).parse::<DeviceRole>() else {
                let legal: Vec<&str> = DeviceRole::ALL.iter().map(|r| r.as_str()).collect();
                return ctx.err(line, "role", BadDirective, format!("role must be one of {}", legal.join(", ")));
            };
            let mut decl = DeviceDecl::new(id, role);
            if !field(3).is_empty() {
                let mut caps = BTreeSet::new();
                for cap in field(3).split(',').map(str::trim) {
                    match cap.parse::<ActionKind>().ok().or((cap == "gaze").then_some(ActionKind::Gaze)) {
                        Some(k) if role.accepts(k) => {
                            caps.insert(k);
                        }
                        Some(k) => {
                            return ctx.err(line, "capabilities", BadDirective, format!("role {role} cannot perform {k}"))
                        }
                        None => return ctx.err(line, "capabilities", BadDirective, format!("unknown capability `{cap}`")),
                    }
                }
                decl.capabilities = caps;
            }
            if script.device(id).is_some() {
                return ctx.err(line, "device", DuplicateId, format!("device `{id}` declared twice"));
            }
            script.devices.push(decl);
        }
        "@var" => {
            let name = field(1);
            if !is_ident(name) || name == POINTS_VAR {
                return ctx.err(line, "name", BadDirective, format!("`{name}` is not a declarable variable name"));
            }
            let Some(initial) = Value::parse_literal(field(2)) else {
                return ctx.err(line, "value", BadDirective, format!("`{}` is not an int, string or bool literal", field(2)));
            };
            if script.variable(name).is_some() {
                return ctx.err(line, "name", DuplicateId, format!("variable `{name}` declared twice"));
            }
            script.variables.push(VarDecl {
                name: name.to_string(),
                initial,
            });
        }
        "@gesture" => {
            let id = field(1);
            if !is_ident(id) || is_clip_file_ref(id) {
                return ctx.err(line, "id", BadDirective, format!("`{id}` is not a gesture id"));
            }
            let source = match field(4) {
                "builtin" | "" => GestureSource::BuiltinLibrary,
                s => match s.strip_prefix("clip:") {
                    Some(p) if !p.trim().is_empty() => GestureSource::CapturedClip(p.trim().to_string()),
                    _ => return ctx.err(line, "source", BadDirective, format!("source must be builtin or clip:<path>, got `{s}`")),
                },
            };
            if script.gesture(id).is_some() {
                return ctx.err(line, "id", DuplicateId, format!("gesture `{id}` declared twice"));
            }
            script.gestures.push(GestureEntry {
                id: id.to_string(),
                label: field(2).to_string(),
                context_note: field(3).to_string(),
                source,
            });
        }
        other => ctx.err(line, "row_id", BadDirective, format!("unknown directive `{other}`")),
    }
}

/// Parses a `.ssync.tsv` script. Cross-reference checks are left to
/// [`validate_script`](super::validate_script).
pub fn parse_script(source: &str) -> Result<ShowScript, ParseErrorList> {
    use ParseErrorCode::*;
    let mut ctx = Ctx { errors: Vec::new() };
    let mut script = ShowScript::default();
    let mut header_seen = false;
    let mut rows: Vec<PendingRow> = Vec::new();
    let mut row_ids = BTreeSet::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if text.trim().is_empty() || text.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = text.split('\t').collect();
        if !header_seen {
            let got: Vec<&str> = cells.iter().map(|c| c.trim()).collect();
            if got != HEADER {
                ctx.err(line, "row_id", MissingHeader, format!("expected header `{}`", HEADER.join("\\t")));
                return Err(ParseErrorList(ctx.errors));
            }
            header_seen = true;
            continue;
        }
        if cells[0].trim_start().starts_with('@') {
            parse_directive(&mut ctx, line, &cells, &mut script);
            continue;
        }
        if cells.len() > HEADER.len() {
            ctx.err(line, "branch", TooManyColumns, format!("{} columns, expected at most 7", cells.len()));
            continue;
        }
        let cell = |i: usize| cells.get(i).map(|c| c.trim()).unwrap_or("");
        let row_id = cell(0);
        if !is_ident(row_id) {
            ctx.err(line, "row_id", BadValue, format!("`{row_id}` is not a valid row id"));
            continue;
        }

        let continuing = rows.last().is_some_and(|r| r.row.id == row_id);
        if !continuing {
            if !row_ids.insert(row_id.to_string()) {
                ctx.err(line, "row_id", DuplicateId, format!("row id `{row_id}` already used"));
                continue;
            }
            let scene_id = cell(1);
            if !is_ident(scene_id) {
                ctx.err(line, "scene_id", BadValue, format!("row `{row_id}` needs a scene id"));
                continue;
            }
            let (trigger, guard) = match parse_trigger(cell(2)) {
                Ok(t) => t,
                Err(m) => {
                    ctx.err(line, "trigger", BadTrigger, m);
                    continue;
                }
            };
            let guard = match guard {
                Some(Ok(g)) => Some(g),
                Some(Err(m)) => {
                    ctx.err(line, "trigger", MalformedExpression, m);
                    None
                }
                None => None,
            };
            rows.push(PendingRow {
                line,
                scene_id: scene_id.to_string(),
                row: CueRow {
                    id: row_id.to_string(),
                    trigger,
                    actions: Vec::new(),
                    branch: None,
                    guard,
                },
                action_failed: false,
            });
        } else {
            let pending = rows.last().expect("continuing implies a row");
            let first_trigger = render_trigger(&pending.row);
            if (!cell(1).is_empty() && cell(1) != pending.scene_id) || (!cell(2).is_empty() && cell(2) != first_trigger) {
                ctx.err(line, "scene_id", ConflictingRowFields, format!("continuation of `{row_id}` disagrees with its first line"));
                continue;
            }
        }

        if !cell(3).is_empty() {
            let action = parse_action(&mut ctx, line, cell(3), cell(4), cell(5));
            let pending = rows.last_mut().expect("row pushed above");
            match action {
                Some(action) => pending.row.actions.push(action),
                None => pending.action_failed = true,
            }
        } else if !cell(4).is_empty() || !cell(5).is_empty() {
            ctx.err(line, "action_kind", UnknownActionKind, "device or payload given without an action kind");
        }
        if !cell(6).is_empty() {
            let pending = rows.last_mut().expect("row pushed above");
            if pending.row.branch.is_some() {
                ctx.err(line, "branch", BadBranch, format!("row `{row_id}` has more than one branch"));
            } else {
                match parse_branch(cells[6]) {
                    Ok(b) => pending.row.branch = Some(b),
                    Err(m) => ctx.err(line, "branch", BadBranch, m),
                }
            }
        }
    }

    if !header_seen {
        ctx.err(1, "row_id", MissingHeader, format!("expected header `{}`", HEADER.join("\\t")));
    }

    // group rows into scenes; a scene's rows must be contiguous
    for pending in rows {
        if pending.row.actions.is_empty() && pending.row.branch.is_none() {
            // an action line that failed to parse already reported the cause
            if !pending.action_failed {
                ctx.err(pending.line, "action_kind", EmptyRow, format!("row `{}` has no actions and no branch", pending.row.id));
            }
            continue;
        }
        match script.scenes.last_mut() {
            Some(scene) if scene.id == pending.scene_id => scene.rows.push(pending.row),
            _ => {
                if script.scenes.iter().any(|s| s.id == pending.scene_id) {
                    ctx.err(pending.line, "scene_id", DuplicateId, format!("scene `{}` resumes after another scene", pending.scene_id));
                    continue;
                }
                script.scenes.push(Scene {
                    id: pending.scene_id,
                    rows: vec![pending.row],
                });
            }
        }
    }

    if ctx.errors.is_empty() {
        Ok(script)
    } else {
        ctx.errors.sort_by_key(|e| e.line);
        Err(ParseErrorList(ctx.errors))
    }
}

pub(super) fn render_trigger(row: &CueRow) -> String {
    let mut s = match &row.trigger {
        Trigger::Auto => "auto".to_string(),
        Trigger::AfterPrevDelay(ms) => format!("after_prev_delay:{ms}"),
        Trigger::OperatorGate(sig) => format!("operator_gate:{sig}"),
    };
    if let Some(g) = &row.guard {
        s.push_str(&format!(" if {g}"));
    }
    s
}

fn render_action(action: &Action) -> (String, String) {
    let device = action.device().unwrap_or("").to_string();
    let payload = match action {
        Action::Speak {
            markup,
            voice,
            default_style,
            ..
        } => {
            let text = markup.render();
            let mut opts = Vec::new();
            if voice != DEFAULT_VOICE {
                opts.push(format!("voice={voice}"));
            }
            if let Some(s) = default_style {
                opts.push(format!("style={s}"));
            }
            if opts.is_empty() && !text.starts_with('[') {
                text
            } else {
                format!("[{}]{text}", opts.join(","))
            }
        }
        Action::PlayGesture { gesture_ref, .. } => gesture_ref.clone(),
        Action::PuppetPlayback { clip_ref, .. } => clip_ref.clone(),
        Action::Video { asset_ref, .. } => asset_ref.clone(),
        Action::Light {
            color,
            pattern,
            brightness,
            ..
        } => {
            let pattern = match pattern {
                LightPattern::Steady => "steady".to_string(),
                LightPattern::Pulse { rate_hz } => format!("pulse:{rate_hz}"),
            };
            format!("color={color}; pattern={pattern}; brightness={brightness}")
        }
        Action::Sound {
            clip_ref,
            looped,
            gain,
            ..
        } => format!("clip={clip_ref}; loop={looped}; gain={gain}"),
        Action::GuiShow {
            screen_ref, payload, ..
        } => {
            let mut s = format!("screen={screen_ref}");
            for (k, v) in payload {
                s.push_str(&format!("; {k}={v}"));
            }
            s
        }
        Action::SetVar { name, expression } => format!("{name} = {expression}"),
        Action::AwardPoints { amount } => amount.to_string(),
        Action::WaitMs { duration } => duration.to_string(),
    };
    (device, payload)
}

fn render_branch(b: &BranchSpec) -> String {
    let mut s = b.prompt.clone();
    for o in &b.options {
        s.push_str(&format!("|{}:{}:{}:{}", o.choice_id, o.points, o.target_row_id, o.label));
    }
    s
}

/// Writes a script in canonical form: header, declarations, then rows.
pub fn serialize_script(script: &ShowScript) -> String {
    let mut out = String::new();
    out.push_str(&HEADER.join("\t"));
    out.push('\n');
    if !script.title.is_empty() {
        out.push_str(&format!("@title\t{}\n", script.title));
    }
    for d in &script.devices {
        let caps: Vec<&str> = d.capabilities.iter().map(|c| c.as_str()).collect();
        out.push_str(&format!("@device\t{}\t{}\t{}\n", d.id, d.role, caps.join(",")));
    }
    for v in &script.variables {
        out.push_str(&format!("@var\t{}\t{}\n", v.name, v.initial));
    }
    for g in &script.gestures {
        let source = match &g.source {
            GestureSource::BuiltinLibrary => "builtin".to_string(),
            GestureSource::CapturedClip(p) => format!("clip:{p}"),
        };
        out.push_str(&format!("@gesture\t{}\t{}\t{}\t{}\n", g.id, g.label, g.context_note, source));
    }
    for scene in &script.scenes {
        for row in &scene.rows {
            let branch = row.branch.as_ref().map(render_branch).unwrap_or_default();
            let trigger = render_trigger(row);
            if row.actions.is_empty() {
                out.push_str(&format!("{}\t{}\t{}\t\t\t\t{}\n", row.id, scene.id, trigger, branch));
            }
            for (i, action) in row.actions.iter().enumerate() {
                let (device, payload) = render_action(action);
                let kind = action.kind();
                if i == 0 {
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{kind}\t{device}\t{payload}\t{branch}\n",
                        row.id, scene.id, trigger
                    ));
                } else {
                    out.push_str(&format!("{}\t\t\t{kind}\t{device}\t{payload}\t\n", row.id));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(body: &str) -> String {
        format!("{}\n@device\tAVATAR\trobot_actor\n{body}", HEADER.join("\t"))
    }

    #[test]
    fn minimal_script() {
        let s = parse_script(&script("r1\tintro\tauto\tspeak\tAVATAR\tHi\t\n")).unwrap();
        assert_eq!(s.scenes.len(), 1);
        assert_eq!(s.scenes[0].rows.len(), 1);
        let row = &s.scenes[0].rows[0];
        assert_eq!(row.trigger, Trigger::Auto);
        assert!(matches!(&row.actions[0], Action::Speak { actor, voice, .. } if actor == "AVATAR" && voice == DEFAULT_VOICE));
    }

    #[test]
    fn branch_points_are_kept() {
        let s = parse_script(&script(
            "r1\tp4\tauto\t\t\t\tPick one|comfort:500:r9:Comfort JITTER|firm:1000:r12:Be Firm with FUSE\n",
        ))
        .unwrap();
        let b = s.scenes[0].rows[0].branch.as_ref().unwrap();
        assert_eq!(b.prompt, "Pick one");
        assert_eq!(b.options[0].points, 500);
        assert_eq!(b.options[0].target_row_id, "r9");
        assert_eq!(b.options[1].points, 1000);
        assert_eq!(b.options[1].label, "Be Firm with FUSE");
    }

    #[test]
    fn gate_without_signal_is_bad_trigger_on_that_line() {
        let err = parse_script(&script("r1\ts\toperator_gate:\tspeak\tAVATAR\tHi\t\n")).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].code, ParseErrorCode::BadTrigger);
        assert_eq!(err.0[0].line, 3);
        assert_eq!(err.0[0].column, "trigger");
    }

    #[test]
    fn error_codes() {
        use ParseErrorCode::*;
        let cases = [
            ("r1\ts\tauto\tdance\tAVATAR\tx\t", UnknownActionKind),
            ("r1\ts\tauto\tlight\tL\tcolor=#12345\t", BadColor),
            ("r1\ts\tauto\tlight\tL\tcolor=300,0,0\t", BadColor),
            ("r1\ts\tsometimes\tspeak\tAVATAR\tHi\t", BadTrigger),
            ("r1\ts\tafter_prev_delay:-4\tspeak\tAVATAR\tHi\t", BadTrigger),
            ("r1\ts\tauto\tspeak\tAVATAR\tHi\t\nr2\ts\tauto\tspeak\tAVATAR\tHi\t\nr1\ts\tauto\tspeak\tAVATAR\tx\t", DuplicateId),
            ("r1\ts\tauto\tset\t\tx = (1\t", MalformedExpression),
            ("r1\ts\tauto if points >\tspeak\tAVATAR\tHi\t", MalformedExpression),
            ("r1\ts\tauto\tspeak\tAVATAR\t{s/bored}Hi\t", MalformedMarkup),
            ("r1\ts\tauto\tsound\tM\tclip=a.wav; gain=2\t", BadValue),
            ("r1\ts\tauto\tlight\tL\tcolor=#000000; pattern=pulse:0\t", BadValue),
            ("r1\ts\tauto\twait\t\t-5\t", BadValue),
            ("r1\ts\tauto\t\t\t\tprompt only", BadBranch),
            ("r1\ts\tauto\t\t\t\tp|a:1:r2:A|a:2:r3:B", BadBranch),
            ("r1\ts\tauto\t\t\t\t", EmptyRow),
            ("r1\ts\tauto\tspeak\tAVATAR\tHi\t\tx", TooManyColumns),
            ("r1\ts\tauto\tspeak\tAVATAR\tHi\t\nr1\tother\t\tspeak\tAVATAR\tHo\t", ConflictingRowFields),
            ("@device\tX\tlight\tspeak", BadDirective),
        ];
        for (body, code) in cases {
            let err = parse_script(&script(body)).expect_err(body);
            assert!(err.has(code), "{body}: expected {code}, got {err}");
        }
    }

    #[test]
    fn unknown_device_is_not_a_parse_error() {
        assert!(parse_script(&script("r1\ts\tauto\tspeak\tGHOST\tHi\t\n")).is_ok());
    }

    #[test]
    fn missing_header() {
        let err = parse_script("r1\ts\tauto\tspeak\tAVATAR\tHi\t\n").unwrap_err();
        assert!(err.has(ParseErrorCode::MissingHeader));
        assert!(parse_script("").unwrap_err().has(ParseErrorCode::MissingHeader));
    }

    #[test]
    fn multi_line_rows_and_options() {
        let body = "\
@device\tFEELMOON\tlight
@device\tMATRIX\tscreen
@var\tstrategy\t\"none\"
r1\tp3\tauto if strategy == \"none\"\tlight\tFEELMOON\tcolor=0,0,255; pattern=pulse:0.5; brightness=0.3\t
r1\t\t\tsound\tMATRIX\tclip=piano.wav; loop=true; gain=0.6\t
r1\t\t\tspeak\tAVATAR\t[voice=en-GB-Ryan,style=sad]I was there too\t
r1\t\t\tset\t\tstrategy = \"comfort\"\t
";
        let s = parse_script(&script(body)).unwrap();
        let row = &s.scenes[0].rows[0];
        assert_eq!(row.actions.len(), 4);
        assert!(row.guard.is_some());
        assert_eq!(
            row.actions[0],
            Action::Light {
                device: "FEELMOON".into(),
                color: Rgb(0, 0, 255),
                pattern: LightPattern::Pulse { rate_hz: 0.5 },
                brightness: 0.3
            }
        );
        assert!(matches!(&row.actions[2], Action::Speak { voice, default_style: Some(Style::Sad), .. } if voice == "en-GB-Ryan"));
        let again = parse_script(&serialize_script(&s)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn scene_cannot_resume() {
        let body = "r1\ta\tauto\tspeak\tAVATAR\tx\t\nr2\tb\tauto\tspeak\tAVATAR\tx\t\nr3\ta\tauto\tspeak\tAVATAR\tx\t\n";
        assert!(parse_script(&script(body)).unwrap_err().has(ParseErrorCode::DuplicateId));
    }

    #[test]
    fn speak_text_starting_with_bracket_round_trips() {
        let s = parse_script(&script("r1\ts\tauto\tspeak\tAVATAR\t[][aside] psst\t\n")).unwrap();
        assert!(matches!(&s.scenes[0].rows[0].actions[0], Action::Speak { markup, .. } if markup.render() == "[aside] psst"));
        assert_eq!(parse_script(&serialize_script(&s)).unwrap(), s);
    }
}
