mod validate_script {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/validate_script.rs"));
}
mod compile_dialogue {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/compile_dialogue.rs"));
}
mod headless_show {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/headless_show.rs"));
}
mod replay_log {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/replay_log.rs"));
}
mod convert_capture {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/convert_capture.rs"));
}
mod serve_bus {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/serve_bus.rs"));
}
mod repair_macros {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/repair_macros.rs"));
}

#[test]
fn validate_script_example_runs() {
    validate_script::run_example().expect("validate_script example should run");
}

#[test]
fn compile_dialogue_example_runs() {
    compile_dialogue::run_example().expect("compile_dialogue example should run");
}

#[test]
fn headless_show_example_runs() {
    headless_show::run_example().expect("headless_show example should run");
}

#[test]
fn replay_log_example_runs() {
    replay_log::run_example().expect("replay_log example should run");
}

#[test]
fn convert_capture_example_runs() {
    convert_capture::run_example().expect("convert_capture example should run");
}

#[test]
fn serve_bus_example_runs() {
    serve_bus::run_example().expect("serve_bus example should run");
}

#[test]
fn repair_macros_example_runs() {
    repair_macros::run_example().expect("repair_macros example should run");
}
