use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::*;
use crate::gesture::{GestureClip, GestureError};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("gesture `{reference}`: clip file {} not found", path.display())]
    MissingClipFile { reference: String, path: PathBuf },
    #[error("gesture `{reference}`: clip file {} is corrupt: {source}", path.display())]
    CorruptClip {
        reference: String,
        path: PathBuf,
        #[source]
        source: GestureError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredGesture {
    pub entry: GestureEntry,
    /// Loaded clip for captured gestures; `None` for library gestures.
    pub clip: Option<GestureClip>,
}

/// Gestures declared by a script plus any clip files referenced directly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GestureRegistry {
    pub entries: BTreeMap<String, RegisteredGesture>,
    pub file_clips: BTreeMap<String, GestureClip>,
}

impl GestureRegistry {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.file_clips.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredGesture> {
        self.entries.get(id)
    }

    /// The clip behind a reference, whether a declared captured gesture or a file path.
    pub fn clip(&self, reference: &str) -> Option<&GestureClip> {
        self.entries
            .get(reference)
            .and_then(|g| g.clip.as_ref())
            .or_else(|| self.file_clips.get(reference))
    }
}

fn load_clip(reference: &str, path: PathBuf) -> Result<GestureClip, RegistryError> {
    if !path.is_file() {
        return Err(RegistryError::MissingClipFile {
            reference: reference.to_string(),
            path,
        });
    }
    GestureClip::read(&path).map_err(|source| RegistryError::CorruptClip {
        reference: reference.to_string(),
        path,
        source,
    })
}

/// Resolves every captured clip against `assets_root` and loads it.
pub fn load_gesture_registry(script: &ShowScript, assets_root: &Path) -> Result<GestureRegistry, RegistryError> {
    let mut registry = GestureRegistry::default();
    for entry in &script.gestures {
        let clip = match &entry.source {
            GestureSource::BuiltinLibrary => None,
            GestureSource::CapturedClip(p) => Some(load_clip(&entry.id, assets_root.join(p))?),
        };
        registry.entries.insert(
            entry.id.clone(),
            RegisteredGesture {
                entry: entry.clone(),
                clip,
            },
        );
    }
    for (_, row) in script.rows() {
        for action in &row.actions {
            let refs: Vec<&str> = match action {
                Action::PlayGesture { gesture_ref, .. } => vec![gesture_ref.as_str()],
                Action::PuppetPlayback { clip_ref, .. } => vec![clip_ref.as_str()],
                Action::Speak { markup, .. } => markup.gesture_refs().collect(),
                _ => Vec::new(),
            };
            for r in refs {
                if is_clip_file_ref(r) && !registry.file_clips.contains_key(r) {
                    let clip = load_clip(r, assets_root.join(r))?;
                    registry.file_clips.insert(r.to_string(), clip);
                }
            }
        }
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script_with(gestures: &str, rows: &str) -> ShowScript {
        let src = format!("{}\n@device\tAVATAR\trobot_actor\n{gestures}{rows}", HEADER.join("\t"));
        parse_script(&src).unwrap()
    }

    #[test]
    fn label_and_context_are_both_kept() {
        let s = script_with(
            "@gesture\tshrug_cool\tPleased\tacting cool while terrified\tbuiltin\n",
            "r1\ts\tauto\tgesture\tAVATAR\tshrug_cool\t\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let reg = load_gesture_registry(&s, dir.path()).unwrap();
        let g = reg.get("shrug_cool").unwrap();
        assert_eq!(g.entry.label, "Pleased");
        assert_eq!(g.entry.context_note, "acting cool while terrified");
        assert!(g.clip.is_none());
    }

    #[test]
    fn missing_clip_file() {
        let s = script_with("@gesture\ttake1\tPlayer take\tpuppet\tclip:takes/take1.gesture.json\n", "r1\ts\tauto\tspeak\tAVATAR\tHi\t\n");
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_gesture_registry(&s, dir.path()),
            Err(RegistryError::MissingClipFile { reference, .. }) if reference == "take1"
        ));
    }

    #[test]
    fn corrupt_clip_file() {
        let s = script_with("", "r1\ts\tauto\tpuppet\tAVATAR\tbad.gesture.json\t\n");
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.gesture.json"), "{not json").unwrap();
        assert!(matches!(load_gesture_registry(&s, dir.path()), Err(RegistryError::CorruptClip { .. })));
    }

    #[test]
    fn empty_registry_is_fine() {
        let s = script_with("", "r1\ts\tauto\tspeak\tAVATAR\tHi\t\n");
        let reg = load_gesture_registry(&s, Path::new("/nonexistent")).unwrap();
        assert!(reg.is_empty());
    }

    #[test]
    fn captured_clip_loads() {
        let s = script_with("@gesture\ttake1\tPlayer take\tpuppet\tclip:take1.gesture.json\n", "r1\ts\tauto\tpuppet\tAVATAR\ttake1\t\n");
        let dir = tempfile::tempdir().unwrap();
        let clip = GestureClip {
            name: "take1".into(),
            frames: vec![crate::gesture::ClipFrame { time_ms: 0.0, params: [("jawOpen".to_string(), 0.5)].into() }],
            duration_ms: 800.0,
            persist: false,
            paired_audio: Some("take1.wav".into()),
        };
        clip.write(&dir.path().join("take1.gesture.json")).unwrap();
        let reg = load_gesture_registry(&s, dir.path()).unwrap();
        assert_eq!(reg.clip("take1"), Some(&clip));
    }
}
