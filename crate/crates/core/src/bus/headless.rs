use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use super::SimulatedDevice;
use crate::engine::{CueLog, Engine, EngineError, EngineInput, EngineState, ManualClock, Phase, StepOutput, TimedInput};
use crate::script::ShowScript;

/// Upper bound on processed events, for scripts whose branches loop forever.
pub const MAX_HEADLESS_EVENTS: usize = 1_000_000;

/// Who answers gates and choices in a headless run.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorScript {
    /// Answers every gate at once and takes the first branch option.
    Auto,
    /// Fixed inputs at unscaled show times in ms.
    Scripted(Vec<TimedInput>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadlessRun {
    pub log: CueLog,
    pub state: EngineState,
    /// Show time at the last event, unscaled ms.
    pub show_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadlessError {
    #[error("time scale must be positive, got {0}")]
    BadTimeScale(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("deadlock at row {row_id}: nothing left that could advance the show")]
    Deadlock { row_id: String, log: CueLog },
    #[error("gave up at row {row_id} after {MAX_HEADLESS_EVENTS} events")]
    EventLimit { row_id: String, log: CueLog },
}

impl HeadlessError {
    /// Log of the partial run, when there was one.
    pub fn log(&self) -> Option<&CueLog> {
        match self {
            HeadlessError::Deadlock { log, .. } | HeadlessError::EventLimit { log, .. } => Some(log),
            _ => None,
        }
    }
}

/// Logged time for an unscaled show time: `floor(t / time_scale)`, and 0
/// when the scale is infinite.
pub fn scaled_time(show_ms: u64, time_scale: f64) -> u64 {
    if time_scale.is_infinite() {
        0
    } else {
        (show_ms as f64 / time_scale).floor() as u64
    }
}

#[derive(Default)]
struct Queue {
    events: BTreeMap<(u64, u64), EngineInput>,
    counter: u64,
}

impl Queue {
    fn push(&mut self, at: u64, input: EngineInput) {
        self.events.insert((at, self.counter), input);
        self.counter += 1;
    }

    fn pop(&mut self) -> Option<(u64, EngineInput)> {
        self.events.pop_first().map(|((t, _), i)| (t, i))
    }
}

/// Runs a show against simulated devices on a discrete-event queue. No
/// wall clock is read and nothing sleeps; events at equal times keep their
/// insertion order.
pub fn run_headless(
    script: impl Into<Arc<ShowScript>>,
    operator: &OperatorScript,
    time_scale: f64,
) -> Result<HeadlessRun, HeadlessError> {
    if time_scale.is_nan() || time_scale <= 0.0 {
        return Err(HeadlessError::BadTimeScale(time_scale));
    }
    let script = script.into();
    let devices: HashMap<String, SimulatedDevice> = SimulatedDevice::for_script(&script)
        .into_iter()
        .map(|d| (d.id.clone(), d))
        .collect();
    let clock = ManualClock::new(0);
    let (mut engine, out) = Engine::start(Arc::clone(&script), clock.clone())?;

    let mut queue = Queue::default();
    if let OperatorScript::Scripted(inputs) = operator {
        for t in inputs {
            queue.push(t.at, t.input.clone());
        }
    }
    let auto = matches!(operator, OperatorScript::Auto);
    let mut now = 0u64;
    let schedule = |queue: &mut Queue, engine: &Engine, out: StepOutput, now: u64| {
        for cmd in &out.commands {
            if let Some(ms) = devices.get(&cmd.target).and_then(|d| d.ack_delay_ms(cmd)) {
                queue.push(now + ms, EngineInput::DeviceAck { command_id: cmd.command_id });
            }
        }
        for t in &out.timers {
            queue.push(now + t.delay_ms, EngineInput::TimerFired { row_id: t.row_id.clone() });
        }
        if auto {
            let answer = match &engine.state().phase {
                Phase::AwaitingGate { signal } => Some(EngineInput::OperatorSignal { name: signal.clone() }),
                Phase::AwaitingChoice { row_id } => engine
                    .script()
                    .row(row_id)
                    .and_then(|r| r.branch.as_ref())
                    .and_then(|b| b.options.first())
                    .map(|o| EngineInput::PlayerChoice {
                        choice_id: o.choice_id.clone(),
                    }),
                _ => None,
            };
            // only on entering the phase, not on every ignored input
            let entered = out
                .log
                .iter()
                .any(|e| matches!(e.payload, crate::engine::LogPayload::PhaseChanged { .. }));
            if let (Some(a), true) = (answer, entered) {
                queue.push(now, a);
            }
        }
    };
    schedule(&mut queue, &engine, out, now);

    let mut processed = 0usize;
    while !engine.state().is_done() {
        let row_id = || engine.current_row().map(|r| r.id.clone()).unwrap_or_default();
        if processed >= MAX_HEADLESS_EVENTS {
            let row_id = row_id();
            return Err(HeadlessError::EventLimit {
                row_id,
                log: engine.into_log(),
            });
        }
        let Some((t, input)) = queue.pop() else {
            let row_id = row_id();
            return Err(HeadlessError::Deadlock {
                row_id,
                log: engine.into_log(),
            });
        };
        processed += 1;
        now = now.max(t);
        clock.set(scaled_time(now, time_scale));
        // rejected inputs are logged by the engine and change nothing
        if let Ok(out) = engine.step(input) {
            schedule(&mut queue, &engine, out, now);
        }
    }
    Ok(HeadlessRun {
        state: engine.state().clone(),
        log: engine.into_log(),
        show_ms: now,
    })
}
