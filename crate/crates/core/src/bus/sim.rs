use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{BusClient, Event, Frame, Message, PeerRole};
use crate::engine::{CommandBody, CommandId, DeviceCommand};
use crate::script::{DeviceRole, ShowScript};

pub const SPEAK_BASE_MS: u64 = 300;
pub const SPEAK_PER_CHAR_MS: u64 = 60;
pub const GESTURE_MS: u64 = 500;
pub const PUPPET_MS: u64 = 3000;

/// `(300 + 60 * chars) * 100 / (100 + rate_percent)`, so +100% halves it.
pub fn speak_duration_ms(chars: usize, rate_percent: i32) -> u64 {
    let base = SPEAK_BASE_MS + SPEAK_PER_CHAR_MS * chars as u64;
    let denom = (100 + rate_percent as i64).max(1) as u64;
    base * 100 / denom
}

/// A device that does nothing but wait out a fixed duration model and ack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedDevice {
    pub id: String,
    pub role: DeviceRole,
}

impl SimulatedDevice {
    pub fn new(id: impl Into<String>, role: DeviceRole) -> Self {
        SimulatedDevice { id: id.into(), role }
    }

    /// One simulated device per declared device.
    pub fn for_script(script: &ShowScript) -> Vec<SimulatedDevice> {
        script
            .devices
            .iter()
            .map(|d| SimulatedDevice::new(d.id.clone(), d.role))
            .collect()
    }

    /// Unscaled milliseconds until the ack, or `None` if no ack is expected.
    pub fn ack_delay_ms(&self, command: &DeviceCommand) -> Option<u64> {
        if !command.expects_ack {
            return None;
        }
        Some(match &command.body {
            CommandBody::Speak {
                utterance, rate_percent, ..
            } => speak_duration_ms(utterance.plain_text.chars().count(), *rate_percent),
            CommandBody::PlayGesture { .. } => GESTURE_MS,
            CommandBody::PuppetPlayback { .. } => PUPPET_MS,
            CommandBody::Light { .. }
            | CommandBody::Sound { .. }
            | CommandBody::Video { .. }
            | CommandBody::GuiShow { .. }
            | CommandBody::Gaze { .. } => 0,
        })
    }

    /// Connects to a live bus, registers, and acks commands in a background
    /// thread, sleeping each duration divided by `time_scale`.
    pub fn spawn(self, addr: SocketAddr, time_scale: f64, heartbeat: Duration) -> std::io::Result<SimHandle> {
        let mut client = BusClient::connect(addr)?;
        client.register(&self.id, PeerRole::Device(self.role))?;
        let stop = Arc::new(AtomicBool::new(false));
        let received = Arc::new(Mutex::new(Vec::new()));
        let frames = Arc::new(Mutex::new(Vec::new()));
        let thread = {
            let stop = Arc::clone(&stop);
            let received = Arc::clone(&received);
            let frames = Arc::clone(&frames);
            thread::spawn(move || self.serve(client, time_scale, heartbeat, &stop, &received, &frames))
        };
        Ok(SimHandle {
            stop,
            received,
            frames,
            thread: Some(thread),
        })
    }

    fn serve(
        &self,
        mut client: BusClient,
        time_scale: f64,
        heartbeat: Duration,
        stop: &AtomicBool,
        received: &Mutex<Vec<DeviceCommand>>,
        frames: &Mutex<Vec<Frame>>,
    ) {
        let mut due: Vec<(Instant, CommandId)> = Vec::new();
        let mut next_beat = Instant::now() + heartbeat;
        while !stop.load(Ordering::SeqCst) {
            match client.recv(Duration::from_millis(5)) {
                Ok(Some(frame)) => {
                    if let Message::Command(cmd) = &frame.message {
                        if let Some(ms) = self.ack_delay_ms(cmd) {
                            let wall = if time_scale.is_finite() { ms as f64 / time_scale } else { 0.0 };
                            due.push((Instant::now() + Duration::from_secs_f64(wall / 1000.0), cmd.command_id));
                        }
                        received.lock().unwrap().push(cmd.clone());
                    }
                    let bye = matches!(frame.message, Message::Bye(_));
                    frames.lock().unwrap().push(frame);
                    if bye {
                        break;
                    }
                }
                Ok(None) => {}
                Err(_) => break,
            }
            let now = Instant::now();
            due.sort();
            let ready = due.iter().take_while(|(t, _)| *t <= now).count();
            for (_, id) in due.drain(..ready) {
                if client.ack(id).is_err() {
                    return;
                }
            }
            if now >= next_beat {
                next_beat = now + heartbeat;
                if client.send(Message::Event(Event::Heartbeat)).is_err() {
                    return;
                }
            }
        }
        client.shutdown();
    }
}

/// A running simulated device.
#[derive(Debug)]
pub struct SimHandle {
    stop: Arc<AtomicBool>,
    received: Arc<Mutex<Vec<DeviceCommand>>>,
    frames: Arc<Mutex<Vec<Frame>>>,
    thread: Option<JoinHandle<()>>,
}

impl SimHandle {
    /// Commands received so far, in arrival order.
    pub fn received(&self) -> Vec<DeviceCommand> {
        self.received.lock().unwrap().clone()
    }

    /// Every frame received so far.
    pub fn frames(&self) -> Vec<Frame> {
        self.frames.lock().unwrap().clone()
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.halt();
    }
}
