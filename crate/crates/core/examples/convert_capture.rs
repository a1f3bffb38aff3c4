// Converts a facial capture CSV into a robot gesture clip: resample to
// 30 Hz, map blendshapes onto robot parameters and pair an audio track.

use storysync::gesture::{convert, pair_audio, parse_capture_csv, resample, GestureClip, ParamMapping};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/captures");
    let capture = parse_capture_csv(&std::fs::read(format!("{dir}/player_take.csv"))?)?;
    let mapping = ParamMapping::load(format!("{dir}/furhat_mapping.json").as_ref())?;
    println!(
        "{} frames of {} params over {:.3} s",
        capture.frames.len(),
        capture.param_names.len(),
        capture.duration_s()
    );

    let at_30 = resample(&capture, 30.0);
    let clip = pair_audio(convert(&at_30, &mapping, "player_take")?, "audio/player_take.wav", 2200.0);
    println!("{} frames, {} ms, audio {:?}", clip.frames.len(), clip.duration_ms, clip.paired_audio);
    assert_eq!(clip.frames.len(), 61);

    let out = tempfile::tempdir()?;
    let path = out.path().join("player_take.gesture.json");
    clip.write(&path)?;
    assert_eq!(GestureClip::read(&path)?, clip);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
