// Parses a show script and prints the validator's findings.
//
// ```text
// cargo run --example validate_script
// ```

use storysync::script::{parse_script, validate_script, DiagnosticCode};

const BROKEN: &str = "row_id\tscene_id\ttrigger\taction_kind\tdevice\tpayload\tbranch
@device\tAVATAR\trobot_actor
@device\tFEELMOON\tlight
r1\tintro\tauto\tlight\tAVATAR\tcolor=#ff0000\t
r2\tintro\tauto\tspeak\tAVATAR\tPick one.\tprompt|a:0:r3:Left|b:0:nowhere:Right
r3\tintro\tauto\taward\t\t-50\t
";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/remind_lite.ssync.tsv");
    let reference = parse_script(&std::fs::read_to_string(path)?)?;
    let findings = validate_script(&reference);
    println!("{}: {} rows, {} findings", reference.title, reference.row_count(), findings.len());
    assert!(findings.is_empty());

    let broken = parse_script(BROKEN)?;
    let findings = validate_script(&broken);
    for d in &findings {
        println!("{d}");
    }
    let codes: Vec<DiagnosticCode> = findings.iter().map(|d| d.code).collect();
    assert!(codes.contains(&DiagnosticCode::CapabilityMismatch));
    assert!(codes.contains(&DiagnosticCode::DanglingBranchTarget));
    assert!(codes.contains(&DiagnosticCode::NegativeAwardPoints));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
