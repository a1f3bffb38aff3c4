// Serves a short show on loopback. Two simulated devices connect over TCP
// and a console-style operator opens the gate over the websocket.

use std::time::Duration;

use storysync::bus::{serve, BusConfig, Frame, Hello, Message, PeerRole, Register, SimulatedDevice, WallClock};
use storysync::engine::{Engine, EngineInput};
use storysync::script::parse_script;
use tungstenite::Message as Ws;

const SHOW: &str = "row_id\tscene_id\ttrigger\taction_kind\tdevice\tpayload\tbranch
@device\tAVATAR\trobot_actor
@device\tFEELMOON\tlight
r1\tintro\tauto\tlight\tFEELMOON\tcolor=#0000ff; pattern=pulse:0.5\t
r2\tintro\toperator_gate:go\tspeak\tAVATAR\t{s/cheerful}Here we go!\t
";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let script = parse_script(SHOW)?;
    let clock = WallClock::new();
    let (engine, initial) = Engine::start(script.clone(), clock)?;
    let bus = serve(
        engine,
        initial,
        BusConfig {
            bind: "127.0.0.1:0".into(),
            ws_bind: Some("127.0.0.1:0".into()),
            time_scale: 100.0,
            clock,
            ..BusConfig::default()
        },
    )?;
    println!("bus on {}", bus.addr);

    let mut devices = Vec::new();
    for d in SimulatedDevice::for_script(&script) {
        let id = d.id.clone();
        devices.push((id, d.spawn(bus.addr, 100.0, Duration::from_secs(2))?));
    }

    let (mut ws, _) = tungstenite::connect(format!("ws://{}", bus.ws_addr.unwrap()))?;
    let send = |ws: &mut tungstenite::WebSocket<_>, m: Message| ws.send(Ws::Text(Frame::new(m).to_json()));
    send(&mut ws, Message::Hello(Hello { client: "example".into() }))?;
    send(
        &mut ws,
        Message::Register(Register {
            id: "console".into(),
            role: PeerRole::Operator,
            capabilities: vec![],
        }),
    )?;
    loop {
        let Ws::Text(text) = ws.read()? else { continue };
        if let Message::StateSnapshot(s) = Frame::from_json(&text)?.message {
            if s.gate.as_deref() == Some("go") {
                println!("gate `go` is waiting; opening it");
                send(&mut ws, Message::OperatorInput(EngineInput::OperatorSignal { name: "go".into() }))?;
                break;
            }
        }
    }
    assert!(bus.wait_done(Duration::from_secs(5)));
    for (id, d) in &devices {
        println!("{id} received {} commands", d.received().len());
    }
    drop(devices);
    let log = bus.shutdown();
    println!("{} log entries", log.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
