//! SSML golden cases: `tests/goldens/ssml/cases.tsv` plus one `<name>.xml` each.

use std::fs;
use std::path::PathBuf;

use storysync::markup::{compile_ssml, tokenize, Style};

pub const BLESS_VAR: &str = "STORYSYNC_BLESS";

pub struct Case {
    pub name: String,
    pub voice: String,
    pub default_style: Option<Style>,
    pub markup: String,
}

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/goldens/ssml")
}

pub fn cases() -> Vec<Case> {
    let text = fs::read_to_string(dir().join("cases.tsv")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.splitn(4, '\t').collect();
            assert_eq!(cells.len(), 4, "bad golden case line: {l}");
            Case {
                name: cells[0].to_string(),
                voice: cells[1].to_string(),
                default_style: (!cells[2].is_empty()).then(|| cells[2].parse().unwrap()),
                markup: cells[3].to_string(),
            }
        })
        .collect()
}

pub fn compile(case: &Case) -> String {
    let markup = tokenize(&case.markup).unwrap_or_else(|e| panic!("{}: {e}", case.name));
    compile_ssml(&markup, &case.voice, case.default_style).ssml + "\n"
}

/// Names of cases whose output differs from the checked-in file. With the
/// bless variable set, the files are rewritten instead.
pub fn mismatches() -> Vec<String> {
    let bless = std::env::var_os(BLESS_VAR).is_some();
    let mut bad = Vec::new();
    for case in cases() {
        let path = dir().join(format!("{}.xml", case.name));
        let actual = compile(&case);
        if bless {
            fs::write(&path, &actual).unwrap();
            continue;
        }
        if fs::read_to_string(&path).ok().as_deref() != Some(actual.as_str()) {
            bad.push(case.name);
        }
    }
    bad
}
