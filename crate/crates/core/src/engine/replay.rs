use thiserror::Error;

use super::{CueLog, Engine, EngineError, ManualClock, TimedInput};
use crate::script::ShowScript;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("replay diverged at log line {line}:\n  expected: {expected}\n  actual:   {actual}")]
    DivergenceDetected {
        /// 1-based NDJSON line number.
        line: usize,
        expected: String,
        actual: String,
    },
}

/// Re-runs a script from time `start_ms` against recorded inputs.
///
/// Inputs the engine rejects are logged and skipped, exactly as in a live run.
pub fn replay(script: &ShowScript, start_ms: u64, inputs: &[TimedInput]) -> Result<CueLog, EngineError> {
    let clock = ManualClock::new(start_ms);
    let (mut engine, _) = Engine::start(script.clone(), clock.clone())?;
    for timed in inputs {
        clock.set(timed.at);
        // rejected inputs are already in the log
        let _ = engine.step(timed.input.clone());
    }
    Ok(engine.into_log())
}

/// Replays the inputs recorded in `reference` and checks the result is
/// byte-identical to it.
pub fn replay_against(script: &ShowScript, reference: &CueLog) -> Result<CueLog, ReplayError> {
    let actual = replay(script, reference.start_time(), &reference.inputs())?;
    let expected_lines: Vec<String> = reference.entries().iter().map(|e| e.to_line()).collect();
    let actual_lines: Vec<String> = actual.entries().iter().map(|e| e.to_line()).collect();
    let n = expected_lines.len().max(actual_lines.len());
    for i in 0..n {
        let e = expected_lines.get(i).map(String::as_str).unwrap_or("<end of log>");
        let a = actual_lines.get(i).map(String::as_str).unwrap_or("<end of log>");
        if e != a {
            return Err(ReplayError::DivergenceDetected {
                line: i + 1,
                expected: e.to_string(),
                actual: a.to_string(),
            });
        }
    }
    Ok(actual)
}
