mod common;

use std::io;
use std::time::Duration;

use storysync::bus::{
    serve, BusClient, BusConfig, BusError, ConnState, Event, Frame, Hello, Message, PeerRole, SimulatedDevice,
    Snapshot, WallClock,
};
use storysync::engine::{
    CommandBody, CommandId, Engine, EngineInput, EngineState, LogPayload, ManualClock, Phase,
};
use storysync::script::{DeviceRole, ShowScript};

use common::{script, serve_on_loopback};

const T: Duration = Duration::from_secs(5);
const HB: Duration = Duration::from_secs(2);

fn device(addr: std::net::SocketAddr, id: &str, role: DeviceRole) -> BusClient {
    let mut c = BusClient::connect(addr).unwrap();
    c.register(id, PeerRole::Device(role)).unwrap();
    c
}

fn operator(addr: std::net::SocketAddr) -> BusClient {
    let mut c = BusClient::connect(addr).unwrap();
    c.register("console", PeerRole::Operator).unwrap();
    c
}

fn next_command(c: &mut BusClient) -> storysync::engine::DeviceCommand {
    match c.recv_until(T, |f| matches!(f.message, Message::Command(_))).unwrap() {
        Some(Frame {
            message: Message::Command(cmd),
            ..
        }) => cmd,
        other => panic!("no command: {other:?}"),
    }
}

fn next_error(c: &mut BusClient) -> String {
    match c.recv_until(T, |f| matches!(f.message, Message::Error(_))).unwrap() {
        Some(Frame {
            message: Message::Error(e),
            ..
        }) => e.code,
        other => panic!("no error frame: {other:?}"),
    }
}

fn snapshot_where(c: &mut BusClient, pred: impl Fn(&Snapshot) -> bool) -> Snapshot {
    match c
        .recv_until(T, |f| matches!(&f.message, Message::StateSnapshot(s) if pred(s)))
        .unwrap()
    {
        Some(Frame {
            message: Message::StateSnapshot(s),
            ..
        }) => *s,
        other => panic!("no matching snapshot: {other:?}"),
    }
}

fn closed(c: &mut BusClient) -> bool {
    loop {
        match c.recv(T) {
            Ok(Some(_)) => continue,
            Ok(None) => return false,
            Err(e) => return matches!(e.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset),
        }
    }
}

const FEAR: &str = "p3_fear\tp3\tauto\tlight\tFEELMOON\tcolor=#800080; pattern=pulse:6; brightness=0.9\t\n";

#[test]
fn registered_light_receives_exactly_the_engine_command() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut moon = device(bus.addr, "FEELMOON", DeviceRole::Light);
    let cmd = next_command(&mut moon);
    moon.ack(cmd.command_id).unwrap();
    assert!(bus.wait_done(T));
    // nothing else arrives for the device
    assert!(moon
        .recv_until(Duration::from_millis(200), |f| matches!(f.message, Message::Command(_)))
        .unwrap()
        .is_none());
    let log = bus.shutdown();
    let emitted: Vec<_> = log.commands().map(|(_, c)| c.clone()).collect();
    assert_eq!(emitted, vec![cmd]);
}

#[test]
fn duplicate_device_is_refused() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut first = device(bus.addr, "FEELMOON", DeviceRole::Light);
    let cmd = next_command(&mut first);
    let mut second = device(bus.addr, "FEELMOON", DeviceRole::Light);
    assert_eq!(next_error(&mut second), "DuplicateDevice");
    assert!(closed(&mut second));
    first.ack(cmd.command_id).unwrap();
    assert!(bus.wait_done(T));
}

#[test]
fn unknown_ack_keeps_the_session() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut moon = device(bus.addr, "FEELMOON", DeviceRole::Light);
    let cmd = next_command(&mut moon);
    moon.ack(CommandId::new(99, 0)).unwrap();
    assert_eq!(next_error(&mut moon), "UnknownCommand");
    moon.ack(cmd.command_id).unwrap();
    assert!(bus.wait_done(T));
}

#[test]
fn undeclared_device_and_wrong_role_are_refused() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut ghost = device(bus.addr, "GHOST", DeviceRole::Light);
    assert_eq!(next_error(&mut ghost), "UnknownDevice");
    let mut wrong = device(bus.addr, "FEELMOON", DeviceRole::Audio);
    assert_eq!(next_error(&mut wrong), "RoleMismatch");
}

#[test]
fn protocol_version_mismatch_refuses_the_session() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut c = BusClient::connect(bus.addr).unwrap();
    c.send_frame(&Frame {
        protocol_version: "2.0.0".into(),
        message: Message::Hello(Hello { client: "future".into() }),
    })
    .unwrap();
    assert_eq!(next_error(&mut c), "ProtocolVersionMismatch");
    assert!(closed(&mut c));
}

#[test]
fn bad_frames_get_error_frames_and_the_connection_stays_open() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut c = BusClient::connect(bus.addr).unwrap();
    let body = br#"{"protocol_version":"1.0.0","msg_type":"dance","payload":{}}"#;
    let mut raw = (body.len() as u32).to_be_bytes().to_vec();
    raw.extend_from_slice(body);
    c.send_raw(&raw).unwrap();
    assert_eq!(next_error(&mut c), "UnknownType");
    let body = b"{not json";
    let mut raw = (body.len() as u32).to_be_bytes().to_vec();
    raw.extend_from_slice(body);
    c.send_raw(&raw).unwrap();
    assert_eq!(next_error(&mut c), "MalformedJson");
    c.send(Message::Hello(Hello { client: "still here".into() })).unwrap();
    let hello = c.recv_until(T, |f| matches!(f.message, Message::Hello(_))).unwrap();
    assert!(hello.is_some());
}

#[test]
fn inputs_from_non_operators_are_refused() {
    let bus = serve_on_loopback(script(FEAR), HB, 1.0);
    let mut c = BusClient::connect(bus.addr).unwrap();
    c.input(EngineInput::OperatorSignal { name: "go".into() }).unwrap();
    assert_eq!(next_error(&mut c), "NotOperator");
    let mut op = operator(bus.addr);
    op.input(EngineInput::DeviceAck {
        command_id: CommandId::new(0, 0),
    })
    .unwrap();
    assert_eq!(next_error(&mut op), "NotOperatorInput");
    op.input(EngineInput::OperatorSignal { name: "nope".into() }).unwrap();
    assert_eq!(next_error(&mut op), "UnknownSignal");
}

#[test]
fn bind_failure() {
    let first = serve_on_loopback(script(FEAR), HB, 1.0);
    let clock = WallClock::new();
    let (engine, out) = Engine::start(script(FEAR), clock).unwrap();
    let err = serve(
        engine,
        out,
        BusConfig {
            bind: first.addr.to_string(),
            clock,
            ..BusConfig::default()
        },
    )
    .err()
    .expect("port is taken");
    assert!(matches!(err, BusError::BindFailure { .. }));
}

fn sims(bus: &storysync::bus::BusHandle, script: &ShowScript) -> Vec<storysync::bus::SimHandle> {
    SimulatedDevice::for_script(script)
        .into_iter()
        .map(|d| d.spawn(bus.addr, 1000.0, HB).unwrap())
        .collect()
}

#[test]
fn operator_drives_the_reference_show() {
    let s = common::reference_script();
    let bus = serve_on_loopback(s.clone(), HB, 1000.0);
    let devices = sims(&bus, &s);
    let mut op = operator(bus.addr);
    let first = snapshot_where(&mut op, |_| true);
    assert_eq!(first.title, "REMind lite");

    let mut gates = Vec::new();
    let mut points_before = None;
    let mut after = None;
    while after.is_none() {
        let snap = snapshot_where(&mut op, |_| true);
        if let Some(before) = points_before {
            if snap.branch.is_none() && snap.state.points == before + 1000 {
                after = Some(snap.state.points);
            }
            continue;
        }
        if let (Phase::AwaitingGate { signal }, Some(gate)) = (&snap.state.phase, &snap.gate) {
            assert_eq!(signal, gate);
            if gates.last() != Some(&(snap.state.pc.clone(), gate.clone())) {
                gates.push((snap.state.pc.clone(), gate.clone()));
                op.input(EngineInput::OperatorSignal { name: gate.clone() }).unwrap();
            }
        }
        if let Some(spec) = &snap.branch {
            let firm = spec.options.iter().find(|o| o.label == "Be Firm with FUSE").unwrap();
            assert_eq!(firm.points, 1000);
            points_before = Some(snap.state.points);
            op.input(EngineInput::PlayerChoice {
                choice_id: firm.choice_id.clone(),
            })
            .unwrap();
        }
    }
    assert_eq!(gates[0].1, "adventure_begin");
    assert!(after.is_some());

    op.input(EngineInput::RepairCommand {
        macro_id: "redirect_gaze".into(),
        args: vec!["AVATAR".into()],
    })
    .unwrap();
    let avatar = &devices[0];
    let deadline = std::time::Instant::now() + T;
    while !avatar
        .received()
        .iter()
        .any(|c| c.body == CommandBody::Gaze { target: "player".into() })
    {
        assert!(std::time::Instant::now() < deadline, "gaze never arrived");
        std::thread::sleep(Duration::from_millis(10));
    }
    drop(devices);
    bus.shutdown();
}

#[test]
fn commands_reach_each_device_in_id_order() {
    let body = "\
r1\ts\tauto\tspeak\tAVATAR\tOne.
r1\t\t\tlight\tFEELMOON\tcolor=#ff0000
r2\ts\tauto\tspeak\tAVATAR\tTwo.\t
r3\ts\tafter_prev_delay:100\tspeak\tAVATAR\tThree.
r3\t\t\tspeak\tFUSE\tFour.
r4\ts\tauto\tlight\tFEELMOON\tcolor=#00ff00\t
";
    let s = script(body);
    let bus = serve_on_loopback(s.clone(), HB, 1000.0);
    let devices = sims(&bus, &s);
    assert!(bus.wait_done(T));
    for d in &devices {
        let ids: Vec<CommandId> = d.received().iter().map(|c| c.command_id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]), "{ids:?}");
    }
    drop(devices);
    let log = bus.shutdown();
    let ids: Vec<CommandId> = log.commands().map(|(_, c)| c.command_id).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn silent_device_degrades_then_is_lost_and_its_commands_are_abandoned() {
    let hb = Duration::from_millis(60);
    let bus = serve_on_loopback(script(FEAR), hb, 1.0);
    let mut op = operator(bus.addr);
    let _moon = device(bus.addr, "FEELMOON", DeviceRole::Light);
    let mut states = Vec::new();
    while !states.contains(&ConnState::Lost) {
        match op.recv(T).unwrap() {
            Some(Frame {
                message: Message::Event(Event::DeviceState { device_id, state }),
                ..
            }) if device_id == "FEELMOON" => states.push(state),
            Some(_) => {}
            None => panic!("device never lost; saw {states:?}"),
        }
    }
    assert_eq!(states, vec![ConnState::Connected, ConnState::Degraded, ConnState::Lost]);
    assert!(bus.wait_done(T));
    let log = bus.shutdown();
    assert!(log.entries().iter().any(|e| matches!(
        &e.payload,
        LogPayload::CommandsAbandoned { device_id, .. } if device_id == "FEELMOON"
    )));
}

#[test]
fn commands_to_a_lost_device_surface_as_device_lost() {
    let body = "\
r1\ts\toperator_gate:go\tlight\tFEELMOON\tcolor=#0000ff\t
";
    let bus = serve_on_loopback(script(body), HB, 1.0);
    let moon = device(bus.addr, "FEELMOON", DeviceRole::Light);
    moon.shutdown();
    let mut op = operator(bus.addr);
    snapshot_where(&mut op, |s| s.devices["FEELMOON"].state == Some(ConnState::Lost));
    op.input(EngineInput::OperatorSignal { name: "go".into() }).unwrap();
    assert!(bus.wait_done(T));
    let log = bus.shutdown();
    assert!(log
        .inputs()
        .iter()
        .any(|t| t.input == EngineInput::DeviceLost { device_id: "FEELMOON".into() }));
}

/// Every state the engine passes through when fed the same inputs.
fn reachable_states(script: &ShowScript, log: &storysync::engine::CueLog) -> Vec<EngineState> {
    let (mut engine, _) = Engine::start(script.clone(), ManualClock::new(0)).unwrap();
    let mut states = vec![engine.state().clone()];
    for t in log.inputs() {
        let _ = engine.step(t.input);
        states.push(engine.state().clone());
    }
    states
}

#[test]
fn snapshots_only_show_states_the_engine_held() {
    let s = common::reference_script();
    let bus = serve_on_loopback(s.clone(), HB, 1000.0);
    let snaps = bus.subscribe();
    let devices = sims(&bus, &s);
    let mut op = operator(bus.addr);
    let mut seen = Vec::new();
    while !bus.snapshot().state.is_done() {
        let snap = snapshot_where(&mut op, |_| true);
        if let Some(sig) = &snap.gate {
            op.input(EngineInput::OperatorSignal { name: sig.clone() }).unwrap();
        }
        if let Some(b) = &snap.branch {
            op.input(EngineInput::PlayerChoice {
                choice_id: b.options[1].choice_id.clone(),
            })
            .unwrap();
        }
        seen.push(snap.state);
    }
    drop(devices);
    let log = bus.shutdown();
    let held = reachable_states(&s, &log);
    seen.extend(snaps.try_iter().map(|s| s.state.clone()));
    assert!(seen.len() > 10);
    for st in &seen {
        assert!(held.contains(st), "snapshot state never held: {:?}", st.phase);
    }
    assert!(held.last().unwrap().phase == Phase::Done);
}

#[test]
fn console_websocket_carries_the_same_frames() {
    use tungstenite::Message as Ws;

    let s = script("r1\tp1\toperator_gate:thumbs_up\tspeak\tAVATAR\tGreat job!\t\n");
    let bus = serve_on_loopback(s.clone(), HB, 1000.0);
    let devices = sims(&bus, &s);
    let url = format!("ws://{}", bus.ws_addr.unwrap());
    let (mut ws, _) = tungstenite::connect(url).unwrap();
    let send = |ws: &mut tungstenite::WebSocket<_>, m: Message| ws.send(Ws::Text(Frame::new(m).to_json())).unwrap();
    send(&mut ws, Message::Hello(Hello { client: "console".into() }));
    send(
        &mut ws,
        Message::Register(storysync::bus::Register {
            id: "console".into(),
            role: PeerRole::Operator,
            capabilities: vec![],
        }),
    );
    let recv_snapshot = |ws: &mut tungstenite::WebSocket<_>| loop {
        if let Ws::Text(t) = ws.read().unwrap() {
            let frame = Frame::from_json(&t).unwrap();
            assert_eq!(frame.protocol_version, "1.0.0");
            if let Message::StateSnapshot(s) = frame.message {
                return *s;
            }
        }
    };
    let snap = recv_snapshot(&mut ws);
    assert_eq!(snap.gate.as_deref(), Some("thumbs_up"));
    send(
        &mut ws,
        Message::OperatorInput(EngineInput::OperatorSignal {
            name: "thumbs_up".into(),
        }),
    );
    loop {
        let s = recv_snapshot(&mut ws);
        if s.state.phase != snap.state.phase {
            assert!(matches!(s.state.phase, Phase::AwaitingAcks { .. } | Phase::Done));
            break;
        }
    }
    assert!(bus.wait_done(T));
    drop(devices);
    bus.shutdown();
}
