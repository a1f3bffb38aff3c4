// Records a show, writes the log as NDJSON, reads it back and replays the
// recorded inputs. A tampered log is reported at the first differing line.

use storysync::bus::{run_headless, OperatorScript};
use storysync::engine::{replay_against, CueLog, ReplayError};
use storysync::script::parse_script;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/remind_lite.ssync.tsv");
    let script = parse_script(&std::fs::read_to_string(path)?)?;
    let recorded = run_headless(script.clone(), &OperatorScript::Auto, 10.0)?.log;

    let text = recorded.to_ndjson();
    let loaded = CueLog::from_ndjson(&text)?;
    let replayed = replay_against(&script, &loaded)?;
    assert_eq!(replayed.to_ndjson(), text);
    println!("replayed {} inputs into {} identical lines", loaded.inputs().len(), replayed.len());

    let tampered = text.replacen("\"points\":500", "\"points\":900", 1);
    match replay_against(&script, &CueLog::from_ndjson(&tampered)?) {
        Err(ReplayError::DivergenceDetected { line, .. }) => println!("diverged at line {line}"),
        other => panic!("tampering went unnoticed: {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
