//! Entry points behind the `storysync` binary.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | validation errors |
//! | 2 | parse, usage or I/O failure |
//! | 3 | headless run deadlocked |
//! | 4 | bind failure |
//! | 10..=22 | gesture conversion errors, see [`gesture_exit_code`] |

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::bus::{self, run_headless, BusConfig, HeadlessError, OperatorScript, WallClock};
use crate::engine::{Engine, TimedInput};
use crate::gesture::{self, GestureError, ParamMapping};
use crate::script::{load_gesture_registry, parse_script, validate_script, ShowScript};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;
pub const EXIT_BIND: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "storysync", version, about = "Show control for multi-robot interactive drama")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a script; prints one diagnostic per line.
    Validate { script: PathBuf },
    /// Run a show live on the bus, or headless against simulated devices.
    Run(RunArgs),
    /// Convert a facial capture CSV into a gesture clip.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub script: PathBuf,
    /// Simulate devices and run to completion without sockets.
    #[arg(long)]
    pub headless: bool,
    /// Answer every gate at once and take the first branch option.
    #[arg(long)]
    pub auto_operator: bool,
    /// NDJSON file of `{"at": ms, "input": {...}}` lines.
    #[arg(long, value_name = "PATH")]
    pub operator_script: Option<PathBuf>,
    /// Stream socket for devices and operators.
    #[arg(long, env = "STORYSYNC_BIND", default_value = bus::DEFAULT_BIND)]
    pub bind: String,
    /// Websocket for the operator console.
    #[arg(long, env = "STORYSYNC_WS_BIND", default_value = bus::DEFAULT_WS_BIND)]
    pub ws_bind: String,
    /// Show-time speed-up; `inf` runs as fast as possible.
    #[arg(long, env = "STORYSYNC_TIME_SCALE", default_value_t = 1.0)]
    pub time_scale: f64,
    /// Cue log output (NDJSON). Headless runs print to stdout without it.
    #[arg(long, env = "STORYSYNC_LOG", value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Root for clip paths; defaults to the script's directory.
    #[arg(long, env = "STORYSYNC_ASSETS", value_name = "DIR")]
    pub assets: Option<PathBuf>,
    #[arg(long, env = "STORYSYNC_HEARTBEAT_MS", default_value_t = bus::DEFAULT_HEARTBEAT_MS)]
    pub heartbeat_ms: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    pub capture: PathBuf,
    /// Parameter mapping JSON; identity when omitted.
    #[arg(long, value_name = "PATH")]
    pub mapping: Option<PathBuf>,
    /// Output frame rate in Hz; keeps the capture's frames when omitted.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Audio asset to pair with the clip.
    #[arg(long, value_name = "REF", requires = "audio_duration_ms")]
    pub audio: Option<String>,
    #[arg(long, value_name = "MS", requires = "audio")]
    pub audio_duration_ms: Option<f64>,
    /// Output path; defaults to the capture path with a `.gesture.json` suffix.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Clip name; defaults to the capture file stem.
    #[arg(long)]
    pub name: Option<String>,
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    init_tracing();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(cli, &mut stdout.lock(), &mut stderr.lock())
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("STORYSYNC_TRACE")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Validate { script } => cmd_validate(&script, out, err),
        Command::Run(args) => cmd_run(&args, out, err),
        Command::Convert(args) => cmd_convert(&args, out, err),
    }
}

fn load_script(path: &Path, err: &mut dyn Write) -> Result<ShowScript, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
        EXIT_PARSE
    })?;
    parse_script(&text).map_err(|errors| {
        for e in errors.iter() {
            let _ = writeln!(err, "{}: {e}", path.display());
        }
        EXIT_PARSE
    })
}

/// Diagnostics go to `out`, one per line; the summary goes to `err`.
pub fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let script = match load_script(path, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let diagnostics = validate_script(&script);
    for d in &diagnostics {
        let _ = writeln!(out, "{d}");
    }
    let errors = diagnostics.iter().filter(|d| d.is_error()).count();
    let _ = writeln!(
        err,
        "{}: {} rows, {errors} errors, {} warnings",
        path.display(),
        script.row_count(),
        diagnostics.len() - errors
    );
    if errors > 0 {
        EXIT_VALIDATION
    } else {
        EXIT_OK
    }
}

fn read_operator_script(path: &Path) -> Result<Vec<TimedInput>, String> {
    let file = File::open(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut inputs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        inputs.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(inputs)
}

/// Parses, validates and loads gestures; shared by both run modes.
fn prepare(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<ShowScript, i32> {
    let script = load_script(&args.script, err)?;
    let diagnostics = validate_script(&script);
    if diagnostics.iter().any(|d| d.is_error()) {
        for d in &diagnostics {
            let _ = writeln!(out, "{d}");
        }
        return Err(EXIT_VALIDATION);
    }
    let assets = args.assets.clone().unwrap_or_else(|| {
        args.script
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    load_gesture_registry(&script, &assets).map_err(|e| {
        let _ = writeln!(err, "error: {e}");
        EXIT_PARSE
    })?;
    Ok(script)
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if args.time_scale.is_nan() || args.time_scale <= 0.0 {
        let _ = writeln!(err, "error: --time-scale must be positive");
        return EXIT_PARSE;
    }
    if args.headless {
        run_headless_mode(args, out, err)
    } else {
        run_serve_mode(args, out, err)
    }
}

fn write_log(log: &crate::engine::CueLog, path: Option<&Path>, out: &mut dyn Write) -> io::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            log.write_to(&mut w)?;
            w.flush()
        }
        None => log.write_to(out),
    }
}

fn run_headless_mode(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let operator = match (&args.operator_script, args.auto_operator) {
        (Some(_), true) => {
            let _ = writeln!(err, "error: use either --auto-operator or --operator-script, not both");
            return EXIT_PARSE;
        }
        (Some(p), false) => match read_operator_script(p) {
            Ok(inputs) => OperatorScript::Scripted(inputs),
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_PARSE;
            }
        },
        (None, true) => OperatorScript::Auto,
        (None, false) => {
            let _ = writeln!(err, "error: --headless needs --auto-operator or --operator-script");
            return EXIT_PARSE;
        }
    };
    let script = match prepare(args, out, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (log, code) = match run_headless(script, &operator, args.time_scale) {
        Ok(run) => {
            let _ = writeln!(
                err,
                "done: {} log entries, {} points, {} ms show time",
                run.log.len(),
                run.state.points,
                run.show_ms
            );
            (run.log, EXIT_OK)
        }
        Err(e @ (HeadlessError::Deadlock { .. } | HeadlessError::EventLimit { .. })) => {
            let _ = writeln!(err, "error: {e}");
            (e.log().cloned().unwrap_or_default(), EXIT_DEADLOCK)
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_VALIDATION;
        }
    };
    if let Err(e) = write_log(&log, args.log.as_deref(), out) {
        let _ = writeln!(err, "error: cannot write log: {e}");
        return EXIT_PARSE;
    }
    code
}

fn run_serve_mode(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let script = match prepare(args, out, err) {
        Ok(s) => Arc::new(s),
        Err(code) => return code,
    };
    let log_sink: Option<Box<dyn Write + Send>> = match &args.log {
        Some(p) => match File::create(p) {
            Ok(f) => Some(Box::new(BufWriter::new(f))),
            Err(e) => {
                let _ = writeln!(err, "error: cannot create {}: {e}", p.display());
                return EXIT_PARSE;
            }
        },
        None => None,
    };
    let clock = WallClock::new();
    let (engine, initial) = match Engine::start(script, clock) {
        Ok(started) => started,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let config = BusConfig {
        bind: args.bind.clone(),
        ws_bind: Some(args.ws_bind.clone()),
        time_scale: args.time_scale,
        heartbeat: Duration::from_millis(args.heartbeat_ms.max(1)),
        log_sink,
        clock,
    };
    let handle = match bus::serve(engine, initial, config) {
        Ok(h) => h,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_BIND;
        }
    };
    let _ = writeln!(out, "bus\t{}", handle.addr);
    if let Some(ws) = handle.ws_addr {
        let _ = writeln!(out, "console\tws://{ws}");
    }
    let _ = out.flush();
    while !handle.wait_done(Duration::from_secs(1)) {}
    let log = handle.shutdown();
    let _ = writeln!(err, "done: {} log entries", log.len());
    EXIT_OK
}

/// Stable exit code per gesture error.
pub fn gesture_exit_code(e: &GestureError) -> i32 {
    match e {
        GestureError::EmptyCapture => 10,
        GestureError::MissingTimecode => 11,
        GestureError::ValueOutOfRange { .. } => 12,
        GestureError::RaggedRow { .. } => 13,
        GestureError::BadNumber { .. } => 14,
        GestureError::BadTimecode { .. } => 15,
        GestureError::NonMonotoneTimecode { .. } => 16,
        GestureError::UnmappedParam(_) => 17,
        GestureError::DuplicateRobotParam(_) => 18,
        GestureError::InvalidClip(_) => 19,
        GestureError::Csv(_) => 20,
        GestureError::Json(_) => 21,
        GestureError::Io(_) => 22,
    }
}

fn default_clip_path(capture: &Path) -> PathBuf {
    let stem = capture.file_stem().unwrap_or_default().to_string_lossy();
    capture.with_file_name(format!("{stem}{}", crate::script::CLIP_FILE_SUFFIX))
}

pub fn cmd_convert(args: &ConvertArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let fail = |err: &mut dyn Write, e: GestureError| {
        let _ = writeln!(err, "error: {e}");
        gesture_exit_code(&e)
    };
    let bytes = match fs::read(&args.capture) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", args.capture.display());
            return EXIT_PARSE;
        }
    };
    let mapping = match &args.mapping {
        Some(p) => match ParamMapping::load(p) {
            Ok(m) => m,
            Err(e) => return fail(err, e),
        },
        None => ParamMapping::identity(),
    };
    if let Some(rate) = args.rate {
        if !(rate.is_finite() && rate > 0.0) {
            let _ = writeln!(err, "error: --rate must be a positive number of Hz");
            return EXIT_PARSE;
        }
    }
    let mut rec = match gesture::parse_capture_csv(&bytes) {
        Ok(r) => r,
        Err(e) => return fail(err, e),
    };
    if let Some(rate) = args.rate {
        rec = gesture::resample(&rec, rate);
    }
    let name = args.name.clone().unwrap_or_else(|| {
        args.capture
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned()
    });
    let mut clip = match gesture::convert(&rec, &mapping, &name) {
        Ok(c) => c,
        Err(e) => return fail(err, e),
    };
    if let (Some(audio), Some(ms)) = (&args.audio, args.audio_duration_ms) {
        clip = gesture::pair_audio(clip, audio, ms);
    }
    let path = args.out.clone().unwrap_or_else(|| default_clip_path(&args.capture));
    if let Err(e) = clip.write(&path) {
        return fail(err, e);
    }
    let params: Vec<&str> = clip
        .frames
        .first()
        .map(|f| f.params.keys().map(String::as_str).collect())
        .unwrap_or_default();
    let _ = writeln!(out, "frames\t{}", clip.frames.len());
    let _ = writeln!(out, "duration_ms\t{}", clip.duration_ms);
    let _ = writeln!(out, "params\t{}", params.join(","));
    let _ = writeln!(out, "wrote\t{}", path.display());
    EXIT_OK
}
