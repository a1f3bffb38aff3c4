// Tokenizes a dialogue line with inline tags and compiles it to SSML
// with a gesture marker track.

use storysync::markup::{compile_ssml, strip_tags, tokenize, Style};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let line = "{s/terrified}{g/shrug_cool}I'm {p/-20}totally{d/250} fine. {v/soft}Really.";
    let markup = tokenize(line)?;
    assert_eq!(markup.render(), line);

    let utterance = compile_ssml(&markup, "avatar", None);
    println!("{}", utterance.ssml);
    for m in &utterance.markers {
        println!("{} -> {}", m.marker_id, m.gesture_ref);
    }
    assert_eq!(utterance.markers.len(), 1);
    assert_eq!(strip_tags(&markup), "I'm totally fine. Really.");

    // a row-level style applies until a tag overrides it
    let plain = compile_ssml(&tokenize("Good morning.")?, "fuse", Some(Style::Cheerful));
    assert!(plain.ssml.contains("style=\"cheerful\""));

    let err = tokenize("{s/bored}Hi").unwrap_err();
    println!("{err}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
