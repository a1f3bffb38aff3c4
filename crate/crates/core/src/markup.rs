//! Inline affect markup for dialogue lines and its SSML compiler.
//!
//! Dialogue is written as plain text with brace-delimited tags:
//!
//! | tag        | meaning                                   | value                          |
//! |------------|-------------------------------------------|--------------------------------|
//! | `{g/ref}`  | fire a gesture at this point              | gesture registry id or clip    |
//! | `{d/ms}`   | pause                                     | 0..=10000                      |
//! | `{p/pct}`  | speech rate delta, percent                | -50..=100                      |
//! | `{k/pct}`  | pitch delta, percent                      | -50..=100                      |
//! | `{v/lvl}`  | volume                                    | x-soft, soft, medium, loud, x-loud |
//! | `{s/name}` | speaking style                            | one of [`Style::ALL`]          |
//!
//! Prosody and style tags hold from their position to the end of the
//! utterance, or until the same attribute is tagged again. Literal braces
//! in text are written `{{` and `}}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PAUSE_MS: u32 = 10_000;
pub const MIN_DELTA_PERCENT: i32 = -50;
pub const MAX_DELTA_PERCENT: i32 = 100;

/// The closed set of speaking styles the compiler accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Angry,
    Cheerful,
    Excited,
    Friendly,
    Hopeful,
    Sad,
    Shouting,
    Terrified,
    Unfriendly,
    Whispering,
}

impl Style {
    pub const ALL: [Style; 10] = [
        Style::Angry,
        Style::Cheerful,
        Style::Excited,
        Style::Friendly,
        Style::Hopeful,
        Style::Sad,
        Style::Shouting,
        Style::Terrified,
        Style::Unfriendly,
        Style::Whispering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Angry => "angry",
            Style::Cheerful => "cheerful",
            Style::Excited => "excited",
            Style::Friendly => "friendly",
            Style::Hopeful => "hopeful",
            Style::Sad => "sad",
            Style::Shouting => "shouting",
            Style::Terrified => "terrified",
            Style::Unfriendly => "unfriendly",
            Style::Whispering => "whispering",
        }
    }

    pub fn legal_names() -> Vec<String> {
        Style::ALL.iter().map(|s| s.as_str().to_string()).collect()
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Style::ALL.iter().copied().find(|st| st.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Volume {
    XSoft,
    Soft,
    Medium,
    Loud,
    XLoud,
}

impl Volume {
    pub const ALL: [Volume; 5] = [
        Volume::XSoft,
        Volume::Soft,
        Volume::Medium,
        Volume::Loud,
        Volume::XLoud,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Volume::XSoft => "x-soft",
            Volume::Soft => "soft",
            Volume::Medium => "medium",
            Volume::Loud => "loud",
            Volume::XLoud => "x-loud",
        }
    }
}

impl FromStr for Volume {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Volume::ALL.iter().copied().find(|v| v.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "token", content = "value", rename_all = "snake_case")]
pub enum Token {
    Text(String),
    Gesture(String),
    Pause(u32),
    Rate(i32),
    Style(Style),
    Volume(Volume),
    Pitch(i32),
}

impl Token {
    pub fn is_text(&self) -> bool {
        matches!(self, Token::Text(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("unknown tag `{tag}` at byte {offset}; expected one of: {}", legal.join(", "))]
    UnknownTag {
        tag: String,
        offset: usize,
        legal: Vec<String>,
    },
    #[error("bad value `{value}` for tag `{prefix}/` at byte {offset}: {reason}")]
    BadTagValue {
        prefix: char,
        value: String,
        offset: usize,
        reason: String,
    },
    #[error("unterminated tag starting at byte {offset}")]
    UnterminatedTag { offset: usize },
    #[error("stray `}}` at byte {offset}; write `}}}}` for a literal brace")]
    StrayCloseBrace { offset: usize },
}

/// A tokenized dialogue line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueMarkup {
    tokens: Vec<Token>,
}

impl DialogueMarkup {
    /// Builds markup from tokens, merging adjacent text and dropping empty text.
    pub fn from_tokens(tokens: impl IntoIterator<Item = Token>) -> Result<Self, MarkupError> {
        let mut out: Vec<Token> = Vec::new();
        for token in tokens {
            check_token(&token)?;
            match (out.last_mut(), token) {
                (_, Token::Text(t)) if t.is_empty() => {}
                (Some(Token::Text(prev)), Token::Text(t)) => prev.push_str(&t),
                (_, t) => out.push(t),
            }
        }
        Ok(DialogueMarkup { tokens: out })
    }

    pub fn plain(text: &str) -> Self {
        DialogueMarkup::from_tokens([Token::Text(text.to_string())])
            .expect("text tokens are always valid")
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gesture_refs(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Gesture(g) => Some(g.as_str()),
            _ => None,
        })
    }

    /// Renders back to the authoring syntax. Inverse of [`tokenize`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            match token {
                Token::Text(t) => {
                    for c in t.chars() {
                        match c {
                            '{' => out.push_str("{{"),
                            '}' => out.push_str("}}"),
                            c => out.push(c),
                        }
                    }
                }
                Token::Gesture(g) => out.push_str(&format!("{{g/{g}}}")),
                Token::Pause(ms) => out.push_str(&format!("{{d/{ms}}}")),
                Token::Rate(p) => out.push_str(&format!("{{p/{p}}}")),
                Token::Pitch(p) => out.push_str(&format!("{{k/{p}}}")),
                Token::Volume(v) => out.push_str(&format!("{{v/{}}}", v.as_str())),
                Token::Style(s) => out.push_str(&format!("{{s/{s}}}")),
            }
        }
        out
    }

    /// Character-weighted speech rate delta over the spoken text.
    pub fn mean_rate_percent(&self) -> i32 {
        let mut rate = 0i64;
        let mut weighted = 0i64;
        let mut chars = 0i64;
        for token in &self.tokens {
            match token {
                Token::Rate(r) => rate = *r as i64,
                Token::Text(t) => {
                    let n = t.chars().count() as i64;
                    weighted += rate * n;
                    chars += n;
                }
                _ => {}
            }
        }
        if chars == 0 {
            0
        } else {
            (weighted as f64 / chars as f64).round() as i32
        }
    }
}

impl fmt::Display for DialogueMarkup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for DialogueMarkup {
    type Err = MarkupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        tokenize(s)
    }
}

const TAG_PREFIXES: [&str; 6] = ["g/", "d/", "p/", "k/", "v/", "s/"];

fn check_token(token: &Token) -> Result<(), MarkupError> {
    let bad = |prefix, value: String, reason: &str| {
        Err(MarkupError::BadTagValue {
            prefix,
            value,
            offset: 0,
            reason: reason.to_string(),
        })
    };
    match token {
        Token::Pause(ms) if *ms > MAX_PAUSE_MS => bad('d', ms.to_string(), "pause exceeds 10000 ms"),
        Token::Rate(p) if !(MIN_DELTA_PERCENT..=MAX_DELTA_PERCENT).contains(p) => {
            bad('p', p.to_string(), "rate delta outside -50..=100")
        }
        Token::Pitch(p) if !(MIN_DELTA_PERCENT..=MAX_DELTA_PERCENT).contains(p) => {
            bad('k', p.to_string(), "pitch delta outside -50..=100")
        }
        Token::Gesture(g) if !valid_gesture_ref(g) => bad('g', g.clone(), "empty or contains braces"),
        _ => Ok(()),
    }
}

fn valid_gesture_ref(g: &str) -> bool {
    !g.is_empty() && !g.contains(['{', '}']) && !g.chars().any(char::is_whitespace)
}

/// Canonical integer form only: no sign prefix, no leading zeros.
fn parse_canonical_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    if s == "-0" {
        return None;
    }
    s.parse().ok()
}

fn parse_tag(body: &str, offset: usize) -> Result<Token, MarkupError> {
    let Some((prefix, value)) = body.split_once('/') else {
        return Err(MarkupError::UnknownTag {
            tag: body.to_string(),
            offset,
            legal: TAG_PREFIXES.iter().map(|p| p.to_string()).collect(),
        });
    };
    let bad = |reason: &str| MarkupError::BadTagValue {
        prefix: prefix.chars().next().unwrap_or('?'),
        value: value.to_string(),
        offset,
        reason: reason.to_string(),
    };
    let delta = |value: &str| -> Result<i32, MarkupError> {
        let v = parse_canonical_int(value)
            .ok_or_else(|| bad("expected an integer percent like -20 or 15"))?;
        if (MIN_DELTA_PERCENT as i64..=MAX_DELTA_PERCENT as i64).contains(&v) {
            Ok(v as i32)
        } else {
            Err(bad("delta outside -50..=100"))
        }
    };
    match prefix {
        "g" => {
            if valid_gesture_ref(value) {
                Ok(Token::Gesture(value.to_string()))
            } else {
                Err(bad("gesture reference must be a non-empty name without spaces"))
            }
        }
        "d" => {
            let ms = parse_canonical_int(value).ok_or_else(|| bad("expected milliseconds"))?;
            if (0..=MAX_PAUSE_MS as i64).contains(&ms) {
                Ok(Token::Pause(ms as u32))
            } else {
                Err(bad("pause outside 0..=10000 ms"))
            }
        }
        "p" => delta(value).map(Token::Rate),
        "k" => delta(value).map(Token::Pitch),
        "v" => value
            .parse::<Volume>()
            .map(Token::Volume)
            .map_err(|_| bad("expected x-soft, soft, medium, loud or x-loud")),
        "s" => value.parse::<Style>().map(Token::Style).map_err(|_| MarkupError::UnknownTag {
            tag: body.to_string(),
            offset,
            legal: Style::legal_names(),
        }),
        _ => Err(MarkupError::UnknownTag {
            tag: body.to_string(),
            offset,
            legal: TAG_PREFIXES.iter().map(|p| p.to_string()).collect(),
        }),
    }
}

/// Splits a raw dialogue line into text and tag tokens.
pub fn tokenize(raw: &str) -> Result<DialogueMarkup, MarkupError> {
    let mut tokens = Vec::new();
    let mut text = String::new();
    let mut chars = raw.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                text.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                text.push('}');
            }
            '}' => return Err(MarkupError::StrayCloseBrace { offset: i }),
            '{' => {
                let rest = &raw[i + 1..];
                let end = rest.find(['}', '{']);
                let Some(end) = end.filter(|&e| rest.as_bytes()[e] == b'}') else {
                    return Err(MarkupError::UnterminatedTag { offset: i });
                };
                let body = &rest[..end];
                if !text.is_empty() {
                    tokens.push(Token::Text(std::mem::take(&mut text)));
                }
                tokens.push(parse_tag(body, i)?);
                // skip the tag body and the closing brace
                while let Some(&(j, _)) = chars.peek() {
                    if j > i + end + 1 {
                        break;
                    }
                    chars.next();
                }
            }
            c => text.push(c),
        }
    }
    if !text.is_empty() {
        tokens.push(Token::Text(text));
    }
    Ok(DialogueMarkup { tokens })
}

/// Plain spoken text: text segments joined by a single space across tags,
/// whitespace trimmed at tag boundaries and at both ends.
pub fn strip_tags(markup: &DialogueMarkup) -> String {
    let mut segments: Vec<String> = Vec::new();
    let mut current = String::new();
    for token in markup.tokens() {
        match token {
            Token::Text(t) => current.push_str(t),
            _ => segments.push(std::mem::take(&mut current)),
        }
    }
    segments.push(current);
    segments
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub marker_id: String,
    pub gesture_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledUtterance {
    pub ssml: String,
    pub markers: Vec<Marker>,
    pub plain_text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Prosody {
    rate: Option<i32>,
    pitch: Option<i32>,
    volume: Option<Volume>,
}

impl Prosody {
    fn is_set(&self) -> bool {
        self.rate.is_some() || self.pitch.is_some() || self.volume.is_some()
    }
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("&quot;"),
            c => escape_text(c.encode_utf8(&mut [0; 4]), &mut out),
        }
    }
    out
}

/// Emits nested express-as / prosody scopes lazily, only around content.
struct ScopeWriter {
    out: String,
    style_open: Option<Style>,
    prosody_open: Option<Prosody>,
    style: Option<Style>,
    prosody: Prosody,
}

impl ScopeWriter {
    fn close_prosody(&mut self) {
        if self.prosody_open.take().is_some() {
            self.out.push_str("</prosody>");
        }
    }

    fn close_style(&mut self) {
        self.close_prosody();
        if self.style_open.take().is_some() {
            self.out.push_str("</express-as>");
        }
    }

    fn sync(&mut self) {
        if self.style_open != self.style {
            self.close_style();
            if let Some(style) = self.style {
                self.out.push_str(&format!("<express-as style=\"{style}\">"));
                self.style_open = Some(style);
            }
        }
        let wanted = self.prosody.is_set().then_some(self.prosody);
        if self.prosody_open != wanted {
            self.close_prosody();
            if let Some(p) = wanted {
                self.out.push_str("<prosody");
                if let Some(rate) = p.rate {
                    self.out.push_str(&format!(" rate=\"{rate:+}%\""));
                }
                if let Some(pitch) = p.pitch {
                    self.out.push_str(&format!(" pitch=\"{pitch:+}%\""));
                }
                if let Some(volume) = p.volume {
                    self.out.push_str(&format!(" volume=\"{}\"", volume.as_str()));
                }
                self.out.push('>');
                self.prosody_open = Some(p);
            }
        }
    }
}

/// Compiles markup into canonical SSML plus the gesture marker track.
pub fn compile_ssml(markup: &DialogueMarkup, voice: &str, default_style: Option<Style>) -> CompiledUtterance {
    let mut w = ScopeWriter {
        out: format!("<speak><voice name=\"{}\">", escape_attr(voice)),
        style_open: None,
        prosody_open: None,
        style: default_style,
        prosody: Prosody::default(),
    };
    let mut markers = Vec::new();
    for token in markup.tokens() {
        match token {
            Token::Text(t) => {
                w.sync();
                escape_text(t, &mut w.out);
            }
            Token::Pause(ms) => {
                w.sync();
                w.out.push_str(&format!("<break time=\"{ms}ms\"/>"));
            }
            Token::Gesture(g) => {
                w.sync();
                let marker_id = format!("m{}", markers.len());
                w.out.push_str(&format!("<mark name=\"{marker_id}\"/>"));
                markers.push(Marker {
                    marker_id,
                    gesture_ref: g.clone(),
                });
            }
            Token::Style(s) => w.style = Some(*s),
            Token::Rate(r) => w.prosody.rate = Some(*r),
            Token::Pitch(p) => w.prosody.pitch = Some(*p),
            Token::Volume(v) => w.prosody.volume = Some(*v),
        }
    }
    w.close_style();
    w.out.push_str("</voice></speak>");
    CompiledUtterance {
        ssml: w.out,
        markers,
        plain_text: strip_tags(markup),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagless_line_is_single_text_token() {
        let m = tokenize("Hello").unwrap();
        assert_eq!(m.tokens(), &[Token::Text("Hello".into())]);
    }

    #[test]
    fn pause_splits_monologue() {
        let raw = "If I were JITTER? {d/800} I would have wanted someone to notice!";
        let m = tokenize(raw).unwrap();
        assert_eq!(
            m.tokens(),
            &[
                Token::Text("If I were JITTER? ".into()),
                Token::Pause(800),
                Token::Text(" I would have wanted someone to notice!".into()),
            ]
        );
        assert_eq!(m.render(), raw);
    }

    #[test]
    fn unknown_style_lists_the_legal_ten() {
        let err = tokenize("{s/bored}Hi").unwrap_err();
        match err {
            MarkupError::UnknownTag { tag, legal, .. } => {
                assert_eq!(tag, "s/bored");
                assert_eq!(legal, Style::legal_names());
                assert_eq!(legal.len(), 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tag_errors() {
        assert!(matches!(tokenize("{x/1}"), Err(MarkupError::UnknownTag { .. })));
        assert!(matches!(tokenize("{nope}"), Err(MarkupError::UnknownTag { .. })));
        assert!(matches!(tokenize("{d/10001}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("{d/+5}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("{p/-51}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("{k/101}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("{v/loudest}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("{g/}"), Err(MarkupError::BadTagValue { .. })));
        assert!(matches!(tokenize("oops {d/5"), Err(MarkupError::UnterminatedTag { offset: 5 })));
        assert!(matches!(tokenize("a {d/5 {d/6}"), Err(MarkupError::UnterminatedTag { .. })));
        assert!(matches!(tokenize("a } b"), Err(MarkupError::StrayCloseBrace { offset: 2 })));
    }

    #[test]
    fn escaped_braces_round_trip() {
        let raw = "set {{x}} {d/0}done";
        let m = tokenize(raw).unwrap();
        assert_eq!(m.tokens()[0], Token::Text("set {x} ".into()));
        assert_eq!(m.render(), raw);
    }

    #[test]
    fn hi_compiles_to_canonical_form() {
        let c = compile_ssml(&tokenize("Hi").unwrap(), "V", None);
        assert_eq!(c.ssml, r#"<speak><voice name="V">Hi</voice></speak>"#);
        assert_eq!(c.plain_text, "Hi");
        assert!(c.markers.is_empty());
    }

    #[test]
    fn style_wraps_text() {
        let m = DialogueMarkup::from_tokens([Token::Style(Style::Sad), Token::Text("I was there too".into())]).unwrap();
        let c = compile_ssml(&m, "V", None);
        assert_eq!(
            c.ssml,
            r#"<speak><voice name="V"><express-as style="sad">I was there too</express-as></voice></speak>"#
        );
    }

    #[test]
    fn prosody_retag_reopens_scope_with_merged_attributes() {
        let m = tokenize("{p/-10}slow {k/5}higher {p/20}fast").unwrap();
        let c = compile_ssml(&m, "V", Some(Style::Hopeful));
        assert_eq!(
            c.ssml,
            concat!(
                r#"<speak><voice name="V"><express-as style="hopeful">"#,
                r#"<prosody rate="-10%">slow </prosody>"#,
                r#"<prosody rate="-10%" pitch="+5%">higher </prosody>"#,
                r#"<prosody rate="+20%" pitch="+5%">fast</prosody>"#,
                r#"</express-as></voice></speak>"#
            )
        );
    }

    #[test]
    fn trailing_tags_emit_no_empty_scopes() {
        let c = compile_ssml(&tokenize("ok{s/sad}{p/10}").unwrap(), "V", None);
        assert_eq!(c.ssml, r#"<speak><voice name="V">ok</voice></speak>"#);
    }

    #[test]
    fn markers_follow_gesture_order() {
        let m = DialogueMarkup::from_tokens([
            Token::Gesture("g1".into()),
            Token::Text("ok".into()),
            Token::Gesture("g2".into()),
        ])
        .unwrap();
        let c = compile_ssml(&m, "V", None);
        assert_eq!(
            c.markers,
            vec![
                Marker { marker_id: "m0".into(), gesture_ref: "g1".into() },
                Marker { marker_id: "m1".into(), gesture_ref: "g2".into() },
            ]
        );
        let m0 = c.ssml.find(r#"<mark name="m0"/>"#).unwrap();
        let ok = c.ssml.find("ok").unwrap();
        let m1 = c.ssml.find(r#"<mark name="m1"/>"#).unwrap();
        assert!(m0 < ok && ok < m1);
    }

    #[test]
    fn xml_special_characters_are_escaped() {
        let c = compile_ssml(&tokenize("a < b & c > d \"q\"").unwrap(), "x\"y", None);
        assert_eq!(
            c.ssml,
            r#"<speak><voice name="x&quot;y">a &lt; b &amp; c &gt; d "q"</voice></speak>"#
        );
    }

    #[test]
    fn strip_tags_joins_with_single_space() {
        let m = DialogueMarkup::from_tokens([Token::Text("a".into()), Token::Pause(100), Token::Text("b".into())]).unwrap();
        assert_eq!(strip_tags(&m), "a b");
        assert_eq!(strip_tags(&DialogueMarkup::default()), "");
        let m = tokenize("  If I were JITTER? {d/800} I would  ").unwrap();
        assert_eq!(strip_tags(&m), "If I were JITTER? I would");
    }

    #[test]
    fn strip_tags_is_idempotent() {
        let m = tokenize("{g/wave}Hello {d/300} there {s/sad}friend").unwrap();
        let once = strip_tags(&m);
        assert_eq!(strip_tags(&DialogueMarkup::plain(&once)), once);
    }

    #[test]
    fn mean_rate_weights_by_characters() {
        let m = tokenize("ab{p/100}cd").unwrap();
        assert_eq!(m.mean_rate_percent(), 50);
        assert_eq!(tokenize("plain").unwrap().mean_rate_percent(), 0);
    }
}
