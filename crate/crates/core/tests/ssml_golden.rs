mod common;

use common::goldens;

#[test]
fn compiled_ssml_matches_goldens() {
    let bad = goldens::mismatches();
    assert!(
        bad.is_empty(),
        "SSML differs for {bad:?}; rerun with {}=1 to rewrite the goldens",
        goldens::BLESS_VAR
    );
}

#[test]
fn goldens_cover_every_tag_and_style() {
    let cases = goldens::cases();
    assert!(cases.len() >= 20);
    let all: String = cases.iter().map(|c| c.markup.as_str()).collect();
    for tag in ["{g/", "{d/", "{p/", "{k/", "{v/", "{s/"] {
        assert!(all.contains(tag), "no golden uses {tag}");
    }
    for style in storysync::markup::Style::ALL {
        assert!(all.contains(&format!("{{s/{style}}}")), "no golden uses {style}");
    }
}
