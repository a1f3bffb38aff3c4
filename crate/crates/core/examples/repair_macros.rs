// Operator repair macros run out of band: the cue position does not move.

use storysync::engine::{CommandBody, Engine, EngineInput, ManualClock, Phase, REPAIR_MACROS};
use storysync::script::parse_script;

const SHOW: &str = "row_id\tscene_id\ttrigger\taction_kind\tdevice\tpayload\tbranch
@device\tAVATAR\trobot_actor
@device\tFEELMOON\tlight
@device\tROOM\taudio
r1\tsad\tauto\tlight\tFEELMOON\tcolor=#0000ff; pattern=pulse:0.5
r1\t\t\tsound\tROOM\tclip=piano.wav; loop=true
r1\t\t\tspeak\tAVATAR\t{s/sad}Nobody noticed.
r2\tsad\toperator_gate:go\tspeak\tAVATAR\tOn we go.\t
";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (mut engine, out) = Engine::start(parse_script(SHOW)?, ManualClock::new(0))?;
    for c in &out.commands {
        engine.step(EngineInput::DeviceAck { command_id: c.command_id })?;
    }
    assert!(matches!(engine.state().phase, Phase::AwaitingGate { .. }));
    println!("available: {REPAIR_MACROS:?}");

    let pc = engine.state().pc;
    for (name, args) in [
        ("redirect_gaze", vec!["AVATAR".to_string()]),
        ("repeat_last_utterance", vec!["AVATAR".to_string()]),
        ("resync_scene", vec![]),
    ] {
        let out = engine.repair(name, &args)?;
        for c in &out.commands {
            let what = match &c.body {
                CommandBody::Speak { utterance, .. } => utterance.plain_text.clone(),
                other => format!("{:?}", other.kind()),
            };
            println!("{name}: {} {} {what}", c.command_id, c.target);
        }
    }
    assert_eq!(engine.state().pc, pc);
    assert!(engine.repair("reboot_everything", &[]).is_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
