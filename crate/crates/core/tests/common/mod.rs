#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use storysync::bus::{serve, BusConfig, BusHandle, WallClock};
use storysync::engine::Engine;
use storysync::script::{parse_script, ShowScript, HEADER};

pub mod gen;
pub mod goldens;

pub fn asset(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(rel)
}

pub fn reference_script() -> ShowScript {
    let text = std::fs::read_to_string(asset("remind_lite.ssync.tsv")).unwrap();
    parse_script(&text).unwrap()
}

/// Header plus `body`, with the usual cast declared.
pub fn script_src(body: &str) -> String {
    format!(
        "{}\n@device\tAVATAR\trobot_actor\n@device\tFUSE\trobot_actor\n@device\tFEELMOON\tlight\n@device\tMATRIX\tscreen\n{body}",
        HEADER.join("\t")
    )
}

pub fn script(body: &str) -> ShowScript {
    parse_script(&script_src(body)).unwrap()
}

pub fn serve_on_loopback(script: ShowScript, heartbeat: Duration, time_scale: f64) -> BusHandle {
    let clock = WallClock::new();
    let (engine, out) = Engine::start(script, clock).unwrap();
    serve(
        engine,
        out,
        BusConfig {
            bind: "127.0.0.1:0".into(),
            ws_bind: Some("127.0.0.1:0".into()),
            time_scale,
            heartbeat,
            log_sink: None,
            clock,
        },
    )
    .unwrap()
}
