mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use storysync::bus::{BusClient, SimulatedDevice};
use storysync::engine::{CueLog, LogPayload};
use storysync::gesture::GestureClip;
use storysync::script::parse_script;

use common::script_src;

fn asset(rel: &str) -> String {
    common::asset(rel).to_string_lossy().into_owned()
}

fn storysync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storysync"))
        .args(args)
        .env_remove("STORYSYNC_BIND")
        .env_remove("STORYSYNC_WS_BIND")
        .env_remove("STORYSYNC_TIME_SCALE")
        .env_remove("STORYSYNC_LOG")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_reference_show_is_clean() {
    let out = storysync(&["validate", &asset("remind_lite.ssync.tsv")]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).is_empty());
    assert!(text(&out.stderr).contains("0 errors"));
}

#[test]
fn validate_reports_a_dangling_branch() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.tsv",
        &script_src("r1\ts\tauto\tspeak\tAVATAR\tPick.\tprompt|a:0:nowhere:Go\n"),
    );
    let out = storysync(&["validate", &p]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("nowhere"));
}

#[test]
fn missing_file_and_parse_errors_exit_2() {
    let out = storysync(&["validate", "/definitely/not/here.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "x.tsv", "not a header\n");
    assert_eq!(storysync(&["validate", &p]).status.code(), Some(2));
    assert_eq!(storysync(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn headless_auto_run_writes_a_complete_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("show.ndjson");
    let out = storysync(&[
        "run",
        &asset("remind_lite.ssync.tsv"),
        "--headless",
        "--auto-operator",
        "--time-scale",
        "inf",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let log = CueLog::from_ndjson(&fs::read_to_string(log).unwrap()).unwrap();
    assert!(matches!(log.entries().last().unwrap().payload, LogPayload::Finished { .. }));
    assert!(log.entries().iter().all(|e| e.logical_time == 0));
}

#[test]
fn headless_log_goes_to_stdout_by_default() {
    let out = storysync(&["run", &asset("remind_lite.ssync.tsv"), "--headless", "--auto-operator"]);
    assert_eq!(out.status.code(), Some(0));
    let log = CueLog::from_ndjson(&text(&out.stdout)).unwrap();
    assert!(log.len() > 30);
}

#[test]
fn gate_without_operator_is_a_deadlock_naming_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let body = "r1\ts\tauto\tspeak\tAVATAR\tHi.\t\nr2\ts\toperator_gate:go\tspeak\tAVATAR\tGo.\t\n";
    let p = write(dir.path(), "gate.tsv", &script_src(body));
    let ops = write(dir.path(), "ops.ndjson", "");
    let out = storysync(&["run", &p, "--headless", "--operator-script", &ops]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("r2"), "{}", text(&out.stderr));
}

#[test]
fn scripted_operator_opens_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let body = "r1\ts\toperator_gate:go\tspeak\tAVATAR\tGo.\t\n";
    let p = write(dir.path(), "gate.tsv", &script_src(body));
    let ops = write(
        dir.path(),
        "ops.ndjson",
        "{\"at\":4000,\"input\":{\"input\":\"operator_signal\",\"name\":\"go\"}}\n",
    );
    let out = storysync(&["run", &p, "--headless", "--operator-script", &ops, "--time-scale", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let log = CueLog::from_ndjson(&text(&out.stdout)).unwrap();
    // "Go." speaks for 300 + 60 * 3 ms after the gate opens at 4000
    assert_eq!(log.entries().last().unwrap().logical_time, (4000 + 300 + 60 * 3) / 2);
}

#[test]
fn occupied_port_exits_4() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = storysync(&["run", &asset("remind_lite.ssync.tsv"), "--bind", &addr, "--ws-bind", "127.0.0.1:0"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn serve_mode_runs_with_simulated_devices() {
    let body = "r1\ts\tauto\tspeak\tAVATAR\tHello there.\t\nr2\ts\tauto\tlight\tFEELMOON\tcolor=#00ff00\t\n";
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "show.tsv", &script_src(body));
    let log = dir.path().join("live.ndjson");
    let mut child = Command::new(env!("CARGO_BIN_EXE_storysync"))
        .args(["run", &p, "--bind", "127.0.0.1:0", "--ws-bind", "127.0.0.1:0", "--log"])
        .arg(&log)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let bus_line = lines.next().unwrap().unwrap();
    let addr = bus_line.strip_prefix("bus\t").unwrap().parse().unwrap();
    assert!(lines.next().unwrap().unwrap().starts_with("console\tws://"));
    let script = parse_script(&script_src(body)).unwrap();
    let sims: Vec<_> = SimulatedDevice::for_script(&script)
        .into_iter()
        .map(|d| d.spawn(addr, 100.0, Duration::from_secs(2)).unwrap())
        .collect();
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    drop(sims);
    let log = CueLog::from_ndjson(&fs::read_to_string(log).unwrap()).unwrap();
    assert_eq!(log.commands().count(), 2);
    assert!(BusClient::connect(addr).is_err());
}

#[test]
fn convert_resamples_and_pairs_audio() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("take.gesture.json");
    let out = storysync(&[
        "convert",
        &asset("captures/player_take.csv"),
        "--mapping",
        &asset("captures/furhat_mapping.json"),
        "--rate",
        "30",
        "--audio",
        "audio/take.wav",
        "--audio-duration-ms",
        "2500",
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    // 121 frames at 60 Hz span 2 s; at 30 Hz that is 61 frames
    assert!(text(&out.stdout).contains("frames\t61\n"));
    let clip = GestureClip::read(&out_path).unwrap();
    assert_eq!(clip.frames.len(), 61);
    assert_eq!(clip.paired_audio.as_deref(), Some("audio/take.wav"));
    assert_eq!(clip.duration_ms, 2500.0);
    assert!(clip.frames[0].params.contains_key("JAW_OPEN"));
}

#[test]
fn convert_reports_gesture_errors_with_stable_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mapping = write(dir.path(), "m.json", r#"{"entries":{"JawOpen":{"robot":"JAW_OPEN"}}}"#);
    let out = storysync(&[
        "convert",
        &asset("captures/player_take.csv"),
        "--mapping",
        &mapping,
        "-o",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(17), "{}", text(&out.stderr));

    let empty = write(dir.path(), "empty.csv", "Timecode,JawOpen\n");
    assert_eq!(storysync(&["convert", &empty]).status.code(), Some(10));
    let over = write(dir.path(), "over.csv", "Timecode,JawOpen\n00:00:00:00.000,1.5\n");
    assert_eq!(storysync(&["convert", &over]).status.code(), Some(12));
    let back = write(
        dir.path(),
        "back.csv",
        "Timecode,JawOpen\n00:00:00:02.000,0.1\n00:00:00:01.000,0.2\n",
    );
    assert_eq!(storysync(&["convert", &back]).status.code(), Some(16));
}
