// Runs the reference show against simulated devices with no network and
// no wall clock, then prints a few lines of the cue log.

use storysync::bus::{run_headless, OperatorScript};
use storysync::engine::{EngineInput, LogPayload, TimedInput};
use storysync::script::parse_script;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/remind_lite.ssync.tsv");
    let script = parse_script(&std::fs::read_to_string(path)?)?;

    let run = run_headless(script.clone(), &OperatorScript::Auto, f64::INFINITY)?;
    println!("{} entries, {} points, {} ms of show", run.log.len(), run.state.points, run.show_ms);
    for e in run.log.entries().iter().filter(|e| matches!(e.payload, LogPayload::ChoiceTaken { .. })) {
        println!("{}", e.to_line());
    }

    // a scripted operator that never opens the first gate
    let stuck = OperatorScript::Scripted(vec![TimedInput {
        at: 1000,
        input: EngineInput::OperatorSignal { name: "wrong".into() },
    }]);
    let err = run_headless(script, &stuck, 1.0).unwrap_err();
    println!("{err}");
    assert!(err.log().is_some());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
