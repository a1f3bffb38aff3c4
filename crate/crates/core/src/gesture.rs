//! Facial capture recordings to robot gesture clips.
//!
//! Capture CSVs carry one row per frame: a timecode column followed by
//! blendshape coefficients in [0, 1]. Recordings are resampled to the robot
//! playback rate with linear interpolation, mapped onto robot parameters and
//! written as `.gesture.json` clips.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPTURE_RATE_HZ: f64 = 60.0;
pub const DEFAULT_PLAYBACK_RATE_HZ: f64 = 25.0;

/// Header names recognised as the timecode column.
const TIMECODE_COLUMNS: [&str; 4] = ["Timecode", "timecode", "time", "Time"];
/// Bookkeeping columns in capture exports that are not coefficients.
const IGNORED_COLUMNS: [&str; 1] = ["BlendShapeCount"];

#[derive(Debug, Error)]
pub enum GestureError {
    #[error("capture has a header but no frames")]
    EmptyCapture,
    #[error("capture header has no timecode column")]
    MissingTimecode,
    #[error("row {row}, column {column}: value {value} outside [0, 1]")]
    ValueOutOfRange { row: usize, column: String, value: f64 },
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("row {row}, column {column}: `{text}` is not a number")]
    BadNumber { row: usize, column: String, text: String },
    #[error("row {row}: `{text}` is not a timecode (seconds or HH:MM:SS:FF.mmm)")]
    BadTimecode { row: usize, text: String },
    #[error("row {row}: timecode does not increase")]
    NonMonotoneTimecode { row: usize },
    #[error("capture parameter `{0}` has no mapping entry")]
    UnmappedParam(String),
    #[error("mapping sends more than one capture parameter to robot parameter `{0}`")]
    DuplicateRobotParam(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureFrame {
    /// Seconds.
    pub timecode: f64,
    /// Values aligned with [`CaptureRecording::param_names`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecording {
    pub param_names: Vec<String>,
    pub frames: Vec<CaptureFrame>,
    pub nominal_rate: f64,
}

impl CaptureRecording {
    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timecode - a.timecode,
            _ => 0.0,
        }
    }

    pub fn value(&self, frame: usize, param: &str) -> Option<f64> {
        let idx = self.param_names.iter().position(|p| p == param)?;
        self.frames.get(frame).map(|f| f.values[idx])
    }

    /// Per-frame name→value maps.
    pub fn frame_params(&self, frame: usize) -> BTreeMap<String, f64> {
        self.param_names
            .iter()
            .cloned()
            .zip(self.frames[frame].values.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CaptureOptions {
    /// Frame rate used to interpret the FF field of `HH:MM:SS:FF.mmm` timecodes.
    pub nominal_rate: f64,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions {
            nominal_rate: DEFAULT_CAPTURE_RATE_HZ,
        }
    }
}

fn parse_timecode(text: &str, fps: f64) -> Option<f64> {
    let text = text.trim();
    if !text.contains(':') {
        return text.parse::<f64>().ok().filter(|t| t.is_finite());
    }
    let parts: Vec<&str> = text.split(':').collect();
    let [h, m, s, ff] = parts.as_slice() else {
        return None;
    };
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    let s: u32 = s.parse().ok()?;
    let frames: f64 = ff.parse().ok()?;
    if m >= 60 || s >= 60 || frames < 0.0 || !frames.is_finite() {
        return None;
    }
    Some(h as f64 * 3600.0 + m as f64 * 60.0 + s as f64 + frames / fps)
}

pub fn parse_capture_csv(bytes: &[u8]) -> Result<CaptureRecording, GestureError> {
    parse_capture_csv_with(bytes, &CaptureOptions::default())
}

pub fn parse_capture_csv_with(bytes: &[u8], options: &CaptureOptions) -> Result<CaptureRecording, GestureError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let time_col = headers
        .iter()
        .position(|h| TIMECODE_COLUMNS.contains(&h))
        .ok_or(GestureError::MissingTimecode)?;
    let param_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| *i != time_col && !IGNORED_COLUMNS.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut frames: Vec<CaptureFrame> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        // header is row 1
        let row = idx + 2;
        if record.len() != headers.len() {
            return Err(GestureError::RaggedRow {
                row,
                found: record.len(),
                expected: headers.len(),
            });
        }
        let tc_text = &record[time_col];
        let timecode = parse_timecode(tc_text, options.nominal_rate).ok_or_else(|| GestureError::BadTimecode {
            row,
            text: tc_text.to_string(),
        })?;
        if frames.last().is_some_and(|f| timecode <= f.timecode) {
            return Err(GestureError::NonMonotoneTimecode { row });
        }
        let mut values = Vec::with_capacity(param_cols.len());
        for (col, name) in &param_cols {
            let text = &record[*col];
            let value: f64 = text.parse().map_err(|_| GestureError::BadNumber {
                row,
                column: name.clone(),
                text: text.to_string(),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(GestureError::ValueOutOfRange {
                    row,
                    column: name.clone(),
                    value,
                });
            }
            values.push(value);
        }
        frames.push(CaptureFrame { timecode, values });
    }
    if frames.is_empty() {
        return Err(GestureError::EmptyCapture);
    }
    Ok(CaptureRecording {
        param_names: param_cols.into_iter().map(|(_, n)| n).collect(),
        frames,
        nominal_rate: options.nominal_rate,
    })
}

/// Number of uniform samples at `rate` that fit in `span` seconds, endpoints included.
pub fn resampled_frame_count(span: f64, rate: f64) -> usize {
    ((span * rate) + 1e-9).floor() as usize + 1
}

/// Resamples onto a uniform grid starting at the first timecode, with
/// linear interpolation between the bracketing source frames.
///
/// Panics if `target_rate` is not positive or the recording is empty.
pub fn resample(rec: &CaptureRecording, target_rate: f64) -> CaptureRecording {
    assert!(target_rate > 0.0 && target_rate.is_finite(), "target rate must be positive");
    assert!(!rec.frames.is_empty(), "cannot resample an empty recording");
    let first = rec.frames[0].timecode;
    let last = rec.frames[rec.frames.len() - 1].timecode;
    let count = resampled_frame_count(last - first, target_rate);
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let t = (first + k as f64 / target_rate).min(last);
        while seg + 1 < rec.frames.len() - 1 && rec.frames[seg + 1].timecode <= t {
            seg += 1;
        }
        let a = &rec.frames[seg];
        let values = match rec.frames.get(seg + 1) {
            Some(b) if t > a.timecode => {
                if t >= b.timecode {
                    b.values.clone()
                } else {
                    let u = (t - a.timecode) / (b.timecode - a.timecode);
                    a.values
                        .iter()
                        .zip(&b.values)
                        .map(|(va, vb)| va + (vb - va) * u)
                        .collect()
                }
            }
            _ => a.values.clone(),
        };
        out.push(CaptureFrame { timecode: t, values });
    }
    CaptureRecording {
        param_names: rec.param_names.clone(),
        frames: out,
        nominal_rate: target_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub robot: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

/// Capture parameter → robot parameter mapping. The identity mapping keeps
/// names and values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamMapping {
    #[serde(default)]
    pub identity: bool,
    #[serde(default)]
    pub entries: BTreeMap<String, MappingEntry>,
}

impl ParamMapping {
    pub fn identity() -> Self {
        ParamMapping {
            identity: true,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GestureError> {
        let m: ParamMapping = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, GestureError> {
        ParamMapping::from_json(&fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), GestureError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in self.entries.values() {
            if !seen.insert(e.robot.as_str()) {
                return Err(GestureError::DuplicateRobotParam(e.robot.clone()));
            }
        }
        Ok(())
    }

    /// Explicit entries win over the identity fallback.
    fn apply(&self, param: &str, value: f64) -> Result<(String, f64), GestureError> {
        match self.entries.get(param) {
            Some(e) => Ok((e.robot.clone(), (e.scale * value + e.offset).clamp(0.0, 1.0))),
            None if self.identity => Ok((param.to_string(), value.clamp(0.0, 1.0))),
            None => Err(GestureError::UnmappedParam(param.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub time_ms: f64,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureClip {
    pub name: String,
    pub frames: Vec<ClipFrame>,
    pub duration_ms: f64,
    #[serde(default)]
    pub persist: bool,
    #[serde(default)]
    pub paired_audio: Option<String>,
}

impl GestureClip {
    pub fn last_frame_ms(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.time_ms)
    }

    /// Checks the clip invariants: times strictly increasing from 0,
    /// duration covering the last frame, values in [0, 1].
    pub fn check(&self) -> Result<(), GestureError> {
        let bad = |m: String| Err(GestureError::InvalidClip(m));
        if let Some(f) = self.frames.first() {
            if f.time_ms != 0.0 {
                return bad(format!("first frame at {} ms, expected 0", f.time_ms));
            }
        }
        for w in self.frames.windows(2) {
            if !(w[1].time_ms > w[0].time_ms) {
                return bad(format!("frame times not increasing at {} ms", w[1].time_ms));
            }
        }
        if !(self.duration_ms >= self.last_frame_ms()) {
            return bad(format!("duration {} ms ends before the last frame", self.duration_ms));
        }
        for f in &self.frames {
            if let Some((k, v)) = f.params.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return bad(format!("{k} = {v} at {} ms is outside [0, 1]", f.time_ms));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("clip serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GestureError> {
        let clip: GestureClip = serde_json::from_str(text)?;
        clip.check()?;
        Ok(clip)
    }

    pub fn write(&self, path: &Path) -> Result<(), GestureError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, GestureError> {
        GestureClip::from_json(&fs::read_to_string(path)?)
    }
}

/// Maps every frame onto robot parameters and rebases time to the first frame.
pub fn convert(rec: &CaptureRecording, mapping: &ParamMapping, name: &str) -> Result<GestureClip, GestureError> {
    let t0 = rec.frames.first().map_or(0.0, |f| f.timecode);
    let mut frames = Vec::with_capacity(rec.frames.len());
    for frame in &rec.frames {
        let mut params = BTreeMap::new();
        for (name, &value) in rec.param_names.iter().zip(&frame.values) {
            let (robot, v) = mapping.apply(name, value)?;
            params.insert(robot, v);
        }
        frames.push(ClipFrame {
            time_ms: (frame.timecode - t0) * 1000.0,
            params,
        });
    }
    let duration_ms = frames.last().map_or(0.0, |f| f.time_ms);
    Ok(GestureClip {
        name: name.to_string(),
        frames,
        duration_ms,
        persist: false,
        paired_audio: None,
    })
}

/// Attaches an audio asset. Playback covers whichever track is longer.
pub fn pair_audio(mut clip: GestureClip, audio_ref: &str, audio_duration_ms: f64) -> GestureClip {
    if let Some(previous) = &clip.paired_audio {
        tracing::info!(clip = %clip.name, %previous, replacement = audio_ref, "replacing paired audio");
    }
    clip.paired_audio = Some(audio_ref.to_string());
    clip.duration_ms = clip.last_frame_ms().max(audio_duration_ms);
    clip
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frames: &[(f64, f64)]) -> CaptureRecording {
        CaptureRecording {
            param_names: vec!["jawOpen".into()],
            frames: frames
                .iter()
                .map(|&(t, v)| CaptureFrame {
                    timecode: t,
                    values: vec![v],
                })
                .collect(),
            nominal_rate: 60.0,
        }
    }

    #[test]
    fn header_only_is_empty_capture() {
        assert!(matches!(parse_capture_csv(b"Timecode,jawOpen\n"), Err(GestureError::EmptyCapture)));
    }

    #[test]
    fn two_frames() {
        let r = parse_capture_csv(b"Timecode,jawOpen\n0.0,0.0\n0.1,1.0\n").unwrap();
        assert_eq!(r.frames.len(), 2);
        assert_eq!(r.param_names, vec!["jawOpen"]);
        assert_eq!(r.value(1, "jawOpen"), Some(1.0));
    }

    #[test]
    fn out_of_range_names_row_and_column() {
        match parse_capture_csv(b"Timecode,jawOpen,browInnerUp\n0.0,0.2,0.1\n0.1,0.3,1.3\n") {
            Err(GestureError::ValueOutOfRange { row, column, value }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "browInnerUp");
                assert_eq!(value, 1.3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(parse_capture_csv(b"jawOpen\n0.1\n"), Err(GestureError::MissingTimecode)));
        assert!(matches!(
            parse_capture_csv(b"Timecode,jawOpen\n0.0,0.1\n0.1\n"),
            Err(GestureError::RaggedRow { row: 3, .. })
        ));
        assert!(matches!(
            parse_capture_csv(b"Timecode,jawOpen\n0.1,0.1\n0.1,0.2\n"),
            Err(GestureError::NonMonotoneTimecode { row: 3 })
        ));
        assert!(matches!(
            parse_capture_csv(b"Timecode,jawOpen\nnoon,0.1\n"),
            Err(GestureError::BadTimecode { row: 2, .. })
        ));
    }

    #[test]
    fn smpte_timecodes_and_blendshape_count() {
        let csv = b"Timecode,BlendShapeCount,jawOpen\n17:43:27:29.500,61,0.5\n17:43:27:30.500,61,0.6\n";
        let r = parse_capture_csv(csv).unwrap();
        assert_eq!(r.param_names, vec!["jawOpen"]);
        let base = 17.0 * 3600.0 + 43.0 * 60.0 + 27.0;
        assert!((r.frames[0].timecode - (base + 29.5 / 60.0)).abs() < 1e-9);
        assert!((r.frames[1].timecode - r.frames[0].timecode - 1.0 / 60.0).abs() < 1e-9);
    }

    #[test]
    fn constant_stays_constant() {
        let r = rec(&[(0.0, 0.4), (0.3, 0.4), (1.0, 0.4)]);
        for rate in [7.0, 25.0, 60.0, 113.0] {
            assert!(resample(&r, rate).frames.iter().all(|f| f.values[0] == 0.4));
        }
    }

    #[test]
    fn single_frame_stays_single() {
        let r = rec(&[(2.5, 0.7)]);
        let out = resample(&r, 30.0);
        assert_eq!(out.frames, r.frames);
    }

    #[test]
    fn endpoints_are_exact() {
        let r = rec(&[(1.0, 0.1), (1.5, 0.9), (2.0, 0.3)]);
        let out = resample(&r, 10.0);
        assert_eq!(out.frames.len(), 11);
        assert_eq!(out.frames[0], r.frames[0]);
        assert_eq!(out.frames[10].values, vec![0.3]);
        assert_eq!(out.frames[5].values, vec![0.9]);
    }

    #[test]
    fn convert_identity_rebases_time() {
        let r = rec(&[(3.0, 0.2), (3.5, 0.8)]);
        let clip = convert(&r, &ParamMapping::identity(), "take").unwrap();
        assert_eq!(clip.frames[0].time_ms, 0.0);
        assert_eq!(clip.frames[1].time_ms, 500.0);
        assert_eq!(clip.frames[1].params["jawOpen"], 0.8);
        assert_eq!(clip.duration_ms, 500.0);
        clip.check().unwrap();
    }

    #[test]
    fn convert_scales_and_clamps() {
        let mut m = ParamMapping::default();
        m.entries.insert("jawOpen".into(), MappingEntry { robot: "JAW_OPEN".into(), scale: 0.5, offset: 0.0 });
        let clip = convert(&rec(&[(0.0, 1.0)]), &m, "c").unwrap();
        assert_eq!(clip.frames[0].params["JAW_OPEN"], 0.5);
        m.entries.get_mut("jawOpen").unwrap().scale = 2.0;
        let clip = convert(&rec(&[(0.0, 0.9)]), &m, "c").unwrap();
        assert_eq!(clip.frames[0].params["JAW_OPEN"], 1.0);
    }

    #[test]
    fn unmapped_param() {
        let m = ParamMapping::from_json(r#"{"entries":{"browInnerUp":{"robot":"BROW_UP"}}}"#).unwrap();
        assert!(matches!(convert(&rec(&[(0.0, 1.0)]), &m, "c"), Err(GestureError::UnmappedParam(p)) if p == "jawOpen"));
    }

    #[test]
    fn duplicate_robot_names_rejected() {
        let err = ParamMapping::from_json(r#"{"entries":{"a":{"robot":"X"},"b":{"robot":"X"}}}"#).unwrap_err();
        assert!(matches!(err, GestureError::DuplicateRobotParam(x) if x == "X"));
    }

    #[test]
    fn pair_audio_takes_longer_track() {
        let mut r = rec(&[(0.0, 0.1), (1.2, 0.1)]);
        let clip = convert(&r, &ParamMapping::identity(), "c").unwrap();
        assert_eq!(pair_audio(clip.clone(), "voice.wav", 1500.0).duration_ms, 1500.0);
        r.frames[1].timecode = 1.5;
        let long = convert(&r, &ParamMapping::identity(), "c").unwrap();
        assert_eq!(pair_audio(long, "voice.wav", 1200.0).duration_ms, 1500.0);
        let twice = pair_audio(pair_audio(clip, "a.wav", 3000.0), "b.wav", 1300.0);
        assert_eq!(twice.paired_audio.as_deref(), Some("b.wav"));
        assert_eq!(twice.duration_ms, 1300.0);
    }

    #[test]
    fn clip_check_rejects_broken_clips() {
        let clip = convert(&rec(&[(0.0, 0.1), (0.5, 0.2)]), &ParamMapping::identity(), "c").unwrap();
        let mut late = clip.clone();
        late.frames[0].time_ms = 5.0;
        assert!(late.check().is_err());
        let mut short = clip.clone();
        short.duration_ms = 10.0;
        assert!(short.check().is_err());
        let mut hot = clip;
        hot.frames[1].params.insert("x".into(), 1.5);
        assert!(GestureClip::from_json(&hot.to_json()).is_err());
    }
}
