use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::*;
use crate::expr::Type;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DiagnosticCode {
    EmptyScript,
    UnknownDevice,
    CapabilityMismatch,
    DanglingBranchTarget,
    UnreachableRow,
    NegativeAwardPoints,
    NegativeBranchPoints,
    DegenerateBranch,
    UnknownGesture,
    BadClipRef,
    UnknownVariable,
    ReadOnlyVariable,
    TypeMismatch,
    PulseRateTooHigh,
}

impl DiagnosticCode {
    pub fn severity(self) -> Severity {
        match self {
            DiagnosticCode::UnreachableRow | DiagnosticCode::DegenerateBranch => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Row the diagnostic is about; `None` for script-level findings.
    pub row_id: Option<String>,
    pub code: DiagnosticCode,
    pub message: String,
}

impl Diagnostic {
    fn new(row_id: Option<&str>, code: DiagnosticCode, message: String) -> Self {
        Diagnostic {
            severity: code.severity(),
            row_id: row_id.map(str::to_string),
            code,
            message,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// `severity\trow_id\tcode\tmessage`, with `-` for script-level rows.
impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.severity,
            self.row_id.as_deref().unwrap_or("-"),
            self.code,
            self.message
        )
    }
}

/// Checks cross-references, capabilities, typing and reachability.
pub fn validate_script(script: &ShowScript) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if script.row_count() == 0 {
        out.push(Diagnostic::new(None, DiagnosticCode::EmptyScript, "script has no cue rows".into()));
        return out;
    }

    let var_type = |name: &str| -> Option<Type> {
        if name == POINTS_VAR {
            Some(Type::Int)
        } else {
            script.variable(name).map(|v| v.initial.ty())
        }
    };

    for (_, row) in script.rows() {
        let id = Some(row.id.as_str());
        let mut push = |code, msg: String| out.push(Diagnostic::new(id, code, msg));

        if let Some(guard) = &row.guard {
            match guard.type_of(&var_type) {
                Ok(Type::Bool) => {}
                Ok(t) => push(DiagnosticCode::TypeMismatch, format!("guard `{guard}` is {t}, not bool")),
                Err(crate::expr::ExprError::UnknownVariable(v)) => {
                    push(DiagnosticCode::UnknownVariable, format!("guard reads undeclared variable `{v}`"))
                }
                Err(e) => push(DiagnosticCode::TypeMismatch, format!("guard `{guard}`: {e}")),
            }
        }

        for action in &row.actions {
            if let Some(dev) = action.device() {
                match script.device(dev) {
                    None => push(DiagnosticCode::UnknownDevice, format!("{} addressed to undeclared device `{dev}`", action.kind())),
                    Some(d) if !d.accepts(action.kind()) => push(
                        DiagnosticCode::CapabilityMismatch,
                        format!("device `{dev}` ({}) does not accept {}", d.role, action.kind()),
                    ),
                    Some(_) => {}
                }
            }
            match action {
                Action::Speak { markup, .. } => {
                    for g in markup.gesture_refs() {
                        if script.gesture(g).is_none() && !is_clip_file_ref(g) {
                            push(DiagnosticCode::UnknownGesture, format!("dialogue references unknown gesture `{g}`"));
                        }
                    }
                }
                Action::PlayGesture { gesture_ref, .. } => {
                    if script.gesture(gesture_ref).is_none() && !is_clip_file_ref(gesture_ref) {
                        push(DiagnosticCode::UnknownGesture, format!("unknown gesture `{gesture_ref}`"));
                    }
                }
                Action::PuppetPlayback { clip_ref, .. } => {
                    let captured = matches!(
                        script.gesture(clip_ref).map(|g| &g.source),
                        Some(GestureSource::CapturedClip(_))
                    );
                    if !captured && !is_clip_file_ref(clip_ref) {
                        push(
                            DiagnosticCode::BadClipRef,
                            format!("puppet playback needs a captured gesture or a {CLIP_FILE_SUFFIX} file, got `{clip_ref}`"),
                        );
                    }
                }
                Action::Light {
                    pattern: LightPattern::Pulse { rate_hz },
                    ..
                } if *rate_hz > MAX_PULSE_HZ => push(
                    DiagnosticCode::PulseRateTooHigh,
                    format!("pulse rate {rate_hz} Hz exceeds the {MAX_PULSE_HZ} Hz limit"),
                ),
                Action::AwardPoints { amount } if *amount < 0 => {
                    push(DiagnosticCode::NegativeAwardPoints, format!("award of {amount} points; points never decrease"))
                }
                Action::SetVar { name, expression } => {
                    if name == POINTS_VAR {
                        push(DiagnosticCode::ReadOnlyVariable, "points only change through awards and branch choices".into());
                    } else if let Some(decl) = script.variable(name) {
                        match expression.type_of(&var_type) {
                            Ok(t) if t == decl.initial.ty() => {}
                            Ok(t) => push(
                                DiagnosticCode::TypeMismatch,
                                format!("`{name}` is {} but `{expression}` is {t}", decl.initial.ty()),
                            ),
                            Err(crate::expr::ExprError::UnknownVariable(v)) => {
                                push(DiagnosticCode::UnknownVariable, format!("`{expression}` reads undeclared variable `{v}`"))
                            }
                            Err(e) => push(DiagnosticCode::TypeMismatch, format!("`{expression}`: {e}")),
                        }
                    } else {
                        push(DiagnosticCode::UnknownVariable, format!("assignment to undeclared variable `{name}`"));
                    }
                }
                _ => {}
            }
        }

        if let Some(branch) = &row.branch {
            if branch.options.len() == 1 {
                push(DiagnosticCode::DegenerateBranch, "branch has a single option".into());
            }
            for o in &branch.options {
                if script.position_of(&o.target_row_id).is_none() {
                    push(
                        DiagnosticCode::DanglingBranchTarget,
                        format!("option `{}` targets missing row `{}`", o.choice_id, o.target_row_id),
                    );
                }
                if o.points < 0 {
                    push(
                        DiagnosticCode::NegativeBranchPoints,
                        format!("option `{}` is worth {} points; points never decrease", o.choice_id, o.points),
                    );
                }
            }
        }
    }

    let reachable = reachable_rows(script);
    for (_, row) in script.rows() {
        if !reachable.contains(row.id.as_str()) {
            out.push(Diagnostic::new(
                Some(&row.id),
                DiagnosticCode::UnreachableRow,
                "no sequential or branch path leads to this row".into(),
            ));
        }
    }
    out
}

/// Successor rows in the flow graph. Branch rows only flow to their
/// targets; a guarded row may be skipped, so it also falls through.
pub(crate) fn successors(script: &ShowScript, pos: RowPos) -> Vec<RowPos> {
    let row = script.row_at(pos).expect("valid position");
    let mut next = Vec::new();
    match &row.branch {
        Some(b) => {
            next.extend(b.options.iter().filter_map(|o| script.position_of(&o.target_row_id)));
            if row.guard.is_some() {
                next.extend(script.next_pos(pos));
            }
        }
        None => next.extend(script.next_pos(pos)),
    }
    next
}

pub(crate) fn reachable_rows(script: &ShowScript) -> BTreeSet<&str> {
    let mut seen: BTreeMap<RowPos, ()> = BTreeMap::new();
    let mut queue: VecDeque<RowPos> = script.first_pos().into_iter().collect();
    while let Some(pos) = queue.pop_front() {
        if seen.insert(pos, ()).is_some() {
            continue;
        }
        queue.extend(successors(script, pos));
    }
    seen.keys()
        .filter_map(|&p| script.row_at(p).map(|r| r.id.as_str()))
        .collect()
}
