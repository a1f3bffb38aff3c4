use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::{debug, info, warn};

use super::{
    encode_frame, major_version, Ack, Bye, ConnState, DeviceSession, DeviceStatus, ErrorBody, Event, Frame,
    FrameDecoder, FrameError, Hello, Message, PeerRole, Register, Snapshot, DEFAULT_HEARTBEAT_MS, PROTOCOL_VERSION,
};
use crate::engine::{Clock, CueLog, DeviceCommand, Engine, EngineError, EngineInput, StepOutput};

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";
pub const DEFAULT_WS_BIND: &str = "127.0.0.1:7879";

const POLL: Duration = Duration::from_millis(10);

/// Milliseconds since the clock was created.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }

    pub fn started_at(start: Instant) -> Self {
        WallClock { start }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        WallClock::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

pub struct BusConfig {
    /// Length-prefixed stream socket.
    pub bind: String,
    /// Websocket for the operator console; `None` disables it.
    pub ws_bind: Option<String>,
    /// Show-time speed-up applied to timers.
    pub time_scale: f64,
    pub heartbeat: Duration,
    /// Receives every log entry as NDJSON as soon as it is written.
    pub log_sink: Option<Box<dyn Write + Send>>,
    /// Clock the engine was started with, so log times and heartbeats agree.
    pub clock: WallClock,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            bind: DEFAULT_BIND.to_string(),
            ws_bind: None,
            time_scale: 1.0,
            heartbeat: Duration::from_millis(DEFAULT_HEARTBEAT_MS),
            log_sink: None,
            clock: WallClock::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BusError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
}

type ConnId = u64;

enum HubEvent {
    Connected { conn: ConnId, writer: Sender<Frame> },
    FrameIn { conn: ConnId, frame: Frame },
    BadFrame { conn: ConnId, error: FrameError },
    Disconnected { conn: ConnId },
    Submit {
        input: EngineInput,
        reply: Sender<Result<(), EngineError>>,
    },
    Shutdown,
}

/// Control handle for a running bus.
pub struct BusHandle {
    pub addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    tx: Sender<HubEvent>,
    latest: Arc<Mutex<Arc<Snapshot>>>,
    subscribers: Arc<Mutex<Vec<Sender<Arc<Snapshot>>>>>,
    stop: Arc<AtomicBool>,
    acceptors: Vec<JoinHandle<()>>,
    core: Option<JoinHandle<CueLog>>,
}

impl BusHandle {
    /// Feeds an input into the engine queue as if an operator sent it.
    pub fn submit(&self, input: EngineInput) -> Result<(), EngineError> {
        let (reply, rx) = mpsc::channel();
        if self.tx.send(HubEvent::Submit { input, reply }).is_err() {
            return Err(EngineError::Finished);
        }
        rx.recv().unwrap_or(Err(EngineError::Finished))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.latest.lock().unwrap())
    }

    /// Every snapshot broadcast from now on.
    pub fn subscribe(&self) -> Receiver<Arc<Snapshot>> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().unwrap().push(tx);
        rx
    }

    /// Blocks until the show is done or `timeout` passes.
    pub fn wait_done(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.snapshot().state.is_done() {
                return true;
            }
            thread::sleep(POLL);
        }
        self.snapshot().state.is_done()
    }

    /// Says bye to every session, stops the bus and returns the log.
    pub fn shutdown(mut self) -> CueLog {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(HubEvent::Shutdown);
        for t in self.acceptors.drain(..) {
            let _ = t.join();
        }
        self.core.take().map(|c| c.join().expect("hub thread")).unwrap_or_default()
    }
}

impl Drop for BusHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(HubEvent::Shutdown);
    }
}

fn bind(addr: &str) -> Result<TcpListener, BusError> {
    let listener = TcpListener::bind(addr).map_err(|source| BusError::BindFailure {
        addr: addr.to_string(),
        source,
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| BusError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
    Ok(listener)
}

/// Serves a started engine: devices and operators connect over the stream
/// socket, the console over the websocket. `initial` is the output of
/// [`Engine::start`] and is dispatched once devices register.
pub fn serve(engine: Engine, initial: StepOutput, config: BusConfig) -> Result<BusHandle, BusError> {
    let listener = bind(&config.bind)?;
    let ws_listener = config.ws_bind.as_deref().map(bind).transpose()?;
    let addr = listener.local_addr().expect("bound socket");
    let ws_addr = ws_listener.as_ref().map(|l| l.local_addr().expect("bound socket"));

    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let next_conn = Arc::new(Mutex::new(0u64));
    let mut acceptors = vec![spawn_acceptor(listener, tx.clone(), Arc::clone(&stop), Arc::clone(&next_conn), false)];
    if let Some(l) = ws_listener {
        acceptors.push(spawn_acceptor(l, tx.clone(), Arc::clone(&stop), next_conn, true));
    }

    let mut hub = Hub::new(engine, config);
    hub.after_step(initial);
    let latest = Arc::clone(&hub.latest);
    let subscribers = Arc::clone(&hub.subscribers);
    let core = thread::spawn(move || hub.run(rx));
    info!(%addr, ?ws_addr, "bus serving");
    Ok(BusHandle {
        addr,
        ws_addr,
        tx,
        latest,
        subscribers,
        stop,
        acceptors,
        core: Some(core),
    })
}

fn spawn_acceptor(
    listener: TcpListener,
    tx: Sender<HubEvent>,
    stop: Arc<AtomicBool>,
    next_conn: Arc<Mutex<u64>>,
    websocket: bool,
) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut conns = Vec::new();
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    let conn = {
                        let mut n = next_conn.lock().unwrap();
                        *n += 1;
                        *n
                    };
                    debug!(conn, %peer, websocket, "connection");
                    let _ = stream.set_nonblocking(false);
                    let _ = stream.set_nodelay(true);
                    let tx = tx.clone();
                    let stop = Arc::clone(&stop);
                    conns.push(if websocket {
                        thread::spawn(move || ws_conn(conn, stream, tx, stop))
                    } else {
                        thread::spawn(move || tcp_conn(conn, stream, tx, stop))
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    warn!(error = %e, "accept failed");
                    thread::sleep(POLL);
                }
            }
        }
        for c in conns {
            let _ = c.join();
        }
    })
}

fn tcp_conn(conn: ConnId, stream: TcpStream, tx: Sender<HubEvent>, stop: Arc<AtomicBool>) {
    let (out_tx, out_rx) = mpsc::channel::<Frame>();
    if tx.send(HubEvent::Connected { conn, writer: out_tx }).is_err() {
        return;
    }
    let Ok(mut write_half) = stream.try_clone() else {
        let _ = tx.send(HubEvent::Disconnected { conn });
        return;
    };
    let writer = thread::spawn(move || {
        for frame in out_rx {
            match encode_frame(&frame) {
                Ok(bytes) => {
                    if write_half.write_all(&bytes).and_then(|_| write_half.flush()).is_err() {
                        break;
                    }
                }
                Err(e) => warn!(error = %e, "dropping outbound frame"),
            }
        }
        // the hub dropped this connection
        let _ = write_half.shutdown(Shutdown::Both);
    });

    let mut stream = stream;
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 16 * 1024];
    'read: while !stop.load(Ordering::SeqCst) {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                decoder.push(&buf[..n]);
                loop {
                    let ev = match decoder.next_frame() {
                        Ok(Some(frame)) => HubEvent::FrameIn { conn, frame },
                        Ok(None) => break,
                        Err(error) => HubEvent::BadFrame { conn, error },
                    };
                    if tx.send(ev).is_err() {
                        break 'read;
                    }
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(HubEvent::Disconnected { conn });
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
}

fn ws_conn(conn: ConnId, stream: TcpStream, tx: Sender<HubEvent>, stop: Arc<AtomicBool>) {
    use tungstenite::{Error as WsError, Message as WsMessage};

    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!(conn, error = %e, "websocket handshake failed");
            return;
        }
    };
    let _ = ws.get_mut().set_read_timeout(Some(POLL));
    let (out_tx, out_rx) = mpsc::channel::<Frame>();
    if tx.send(HubEvent::Connected { conn, writer: out_tx }).is_err() {
        return;
    }
    'conn: while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                let ev = match super::decode_payload(text.as_bytes()) {
                    Ok(frame) => HubEvent::FrameIn { conn, frame },
                    Err(error) => HubEvent::BadFrame { conn, error },
                };
                if tx.send(ev).is_err() {
                    break;
                }
            }
            Ok(WsMessage::Binary(bytes)) => {
                let ev = match super::decode_payload(&bytes) {
                    Ok(frame) => HubEvent::FrameIn { conn, frame },
                    Err(error) => HubEvent::BadFrame { conn, error },
                };
                if tx.send(ev).is_err() {
                    break;
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match out_rx.try_recv() {
                Ok(frame) => {
                    if ws.send(WsMessage::Text(frame.to_json())).is_err() {
                        break 'conn;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break 'conn;
                }
            }
        }
    }
    let _ = tx.send(HubEvent::Disconnected { conn });
}

struct Conn {
    writer: Sender<Frame>,
    peer: Option<(String, PeerRole)>,
}

struct Hub {
    engine: Engine,
    clock: WallClock,
    time_scale: f64,
    heartbeat_ms: u64,
    log_sink: Option<Box<dyn Write + Send>>,
    log_written: usize,
    conns: BTreeMap<ConnId, Conn>,
    /// Device id to its session and the connection carrying it, if any.
    sessions: BTreeMap<String, (Option<ConnId>, DeviceSession)>,
    operators: BTreeSet<ConnId>,
    /// Commands waiting for their device to register or recover.
    queued: BTreeMap<String, Vec<DeviceCommand>>,
    /// Dispatched commands still owed an ack, by target device.
    outstanding: BTreeMap<crate::engine::CommandId, String>,
    timers: Vec<(Instant, String)>,
    follow_ups: Vec<EngineInput>,
    snapshot_seq: u64,
    latest: Arc<Mutex<Arc<Snapshot>>>,
    subscribers: Arc<Mutex<Vec<Sender<Arc<Snapshot>>>>>,
}

impl Hub {
    fn new(engine: Engine, config: BusConfig) -> Self {
        let hub = Hub {
            clock: config.clock,
            time_scale: config.time_scale,
            heartbeat_ms: config.heartbeat.as_millis().max(1) as u64,
            log_sink: config.log_sink,
            log_written: 0,
            conns: BTreeMap::new(),
            sessions: BTreeMap::new(),
            operators: BTreeSet::new(),
            queued: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            timers: Vec::new(),
            follow_ups: Vec::new(),
            snapshot_seq: 0,
            latest: Arc::new(Mutex::new(Arc::new(Snapshot::of(&engine, 0, 0, BTreeMap::new())))),
            subscribers: Arc::new(Mutex::new(Vec::new())),
            engine,
        };
        let devices = hub.device_statuses();
        *hub.latest.lock().unwrap() = Arc::new(Snapshot::of(&hub.engine, 0, 0, devices));
        hub
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn run(mut self, rx: Receiver<HubEvent>) -> CueLog {
        let tick = Duration::from_millis((self.heartbeat_ms / 4).clamp(1, 250));
        let mut next_check = Instant::now() + tick;
        loop {
            let mut wake = next_check;
            if let Some((t, _)) = self.timers.iter().min_by_key(|(t, _)| *t) {
                wake = wake.min(*t);
            }
            let wait = wake.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(HubEvent::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(ev) => self.handle(ev),
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.fire_timers();
            if Instant::now() >= next_check {
                next_check = Instant::now() + tick;
                self.check_heartbeats();
            }
        }
        for conn in self.conns.values() {
            let _ = conn.writer.send(Frame::new(Message::Bye(Bye {
                reason: "bus shutting down".into(),
            })));
        }
        self.conns.clear();
        self.flush_log();
        self.engine.into_log()
    }

    fn send(&self, conn: ConnId, message: Message) {
        if let Some(c) = self.conns.get(&conn) {
            let _ = c.writer.send(Frame::new(message));
        }
    }

    fn send_error(&self, conn: ConnId, code: &str, message: impl Into<String>, command_id: Option<crate::engine::CommandId>) {
        let message = message.into();
        warn!(conn, code, %message, "error frame");
        self.send(
            conn,
            Message::Error(ErrorBody {
                code: code.to_string(),
                message,
                command_id,
            }),
        );
    }

    /// Sends an error and drops the connection.
    fn refuse(&mut self, conn: ConnId, code: &str, message: impl Into<String>) {
        let message = message.into();
        self.send_error(conn, code, message.clone(), None);
        self.send(conn, Message::Bye(Bye { reason: message }));
        self.conns.remove(&conn);
        self.operators.remove(&conn);
    }

    fn to_operators(&self, message: &Message) {
        for op in &self.operators {
            self.send(*op, message.clone());
        }
    }

    fn handle(&mut self, ev: HubEvent) {
        match ev {
            HubEvent::Connected { conn, writer } => {
                self.conns.insert(conn, Conn { writer, peer: None });
            }
            HubEvent::FrameIn { conn, frame } => self.on_frame(conn, frame),
            HubEvent::BadFrame { conn, error } => {
                self.send_error(conn, error.code(), error.to_string(), None);
            }
            HubEvent::Disconnected { conn } => self.on_disconnect(conn),
            HubEvent::Submit { input, reply } => {
                let _ = reply.send(self.step(input));
            }
            HubEvent::Shutdown => {}
        }
    }

    fn on_frame(&mut self, conn: ConnId, frame: Frame) {
        if !self.conns.contains_key(&conn) {
            return;
        }
        if major_version(&frame.protocol_version) != major_version(PROTOCOL_VERSION) {
            self.refuse(
                conn,
                "ProtocolVersionMismatch",
                format!("bus speaks {PROTOCOL_VERSION}, peer sent {}", frame.protocol_version),
            );
            return;
        }
        let now = self.now();
        let device = self.conns[&conn].peer.as_ref().and_then(|(id, role)| match role {
            PeerRole::Device(_) => Some(id.clone()),
            PeerRole::Operator => None,
        });
        if let Some(id) = &device {
            let recovered = self.sessions.get_mut(id).and_then(|(_, s)| s.heartbeat(now));
            if let Some(state) = recovered {
                self.device_state_changed(id, state);
            }
        }
        match frame.message {
            Message::Hello(_) => self.send(
                conn,
                Message::Hello(Hello {
                    client: "storysync-hub".into(),
                }),
            ),
            Message::Register(reg) => self.on_register(conn, reg),
            Message::Ack(Ack { command_id }) => match (&device, self.outstanding.get(&command_id)) {
                (Some(d), Some(target)) if d == target => {
                    self.outstanding.remove(&command_id);
                    let _ = self.step(EngineInput::DeviceAck { command_id });
                }
                _ => self.send_error(
                    conn,
                    "UnknownCommand",
                    format!("no command {command_id} is awaiting an ack from this session"),
                    Some(command_id),
                ),
            },
            Message::Event(Event::Heartbeat) => {}
            Message::Event(ev @ Event::MarkerReached { .. }) => self.to_operators(&Message::Event(ev)),
            Message::Event(_) => {}
            Message::OperatorInput(input) => {
                if !self.operators.contains(&conn) {
                    self.send_error(conn, "NotOperator", "register as operator before sending inputs", None);
                    return;
                }
                if !matches!(
                    input,
                    EngineInput::OperatorSignal { .. } | EngineInput::PlayerChoice { .. } | EngineInput::RepairCommand { .. }
                ) {
                    self.send_error(conn, "NotOperatorInput", "operators may send signals, choices and repairs", None);
                    return;
                }
                if let Err(e) = self.step(input) {
                    self.send_error(conn, e.code(), e.to_string(), None);
                }
            }
            Message::Bye(_) => {
                self.conns.remove(&conn);
                self.on_disconnect(conn);
            }
            other => self.send_error(
                conn,
                "UnexpectedType",
                format!("the bus does not accept {} frames", other.msg_type()),
                None,
            ),
        }
    }

    fn on_register(&mut self, conn: ConnId, reg: Register) {
        if self.conns[&conn].peer.is_some() {
            self.send_error(conn, "AlreadyRegistered", "this connection is already registered", None);
            return;
        }
        let role = match reg.role {
            PeerRole::Operator => {
                self.conns.get_mut(&conn).unwrap().peer = Some((reg.id, PeerRole::Operator));
                self.operators.insert(conn);
                self.send(conn, Message::StateSnapshot(Box::new((*self.snapshot()).clone())));
                return;
            }
            PeerRole::Device(r) => r,
        };
        let Some(decl) = self.engine.script().device(&reg.id).cloned() else {
            self.refuse(conn, "UnknownDevice", format!("`{}` is not declared by the script", reg.id));
            return;
        };
        if decl.role != role {
            self.refuse(
                conn,
                "RoleMismatch",
                format!("`{}` is declared as {}, not {role}", reg.id, decl.role),
            );
            return;
        }
        if let Some((Some(other), s)) = self.sessions.get(&reg.id) {
            if s.state != ConnState::Lost && self.conns.contains_key(other) {
                self.refuse(conn, "DuplicateDevice", format!("`{}` is already registered", reg.id));
                return;
            }
        }
        let session = DeviceSession::new(reg.id.clone(), role, reg.capabilities, self.now());
        self.conns.get_mut(&conn).unwrap().peer = Some((reg.id.clone(), reg.role));
        self.sessions.insert(reg.id.clone(), (Some(conn), session));
        info!(device = %reg.id, %role, "registered");
        self.device_state_changed(&reg.id, ConnState::Connected);
        self.publish();
    }

    fn on_disconnect(&mut self, conn: ConnId) {
        self.conns.remove(&conn);
        self.operators.remove(&conn);
        let lost: Vec<String> = self
            .sessions
            .iter()
            .filter(|(_, (c, _))| *c == Some(conn))
            .map(|(id, _)| id.clone())
            .collect();
        for id in lost {
            if let Some((c, s)) = self.sessions.get_mut(&id) {
                *c = None;
                if let Some(state) = s.mark_lost() {
                    self.device_state_changed(&id, state);
                }
            }
        }
    }

    fn check_heartbeats(&mut self) {
        let now = self.now();
        let changes: Vec<(String, ConnState)> = self
            .sessions
            .iter_mut()
            .filter_map(|(id, (_, s))| s.check(now, self.heartbeat_ms).map(|st| (id.clone(), st)))
            .collect();
        for (id, state) in changes {
            self.device_state_changed(&id, state);
        }
    }

    fn device_state_changed(&mut self, id: &str, state: ConnState) {
        info!(device = id, ?state, "device state");
        self.to_operators(&Message::Event(Event::DeviceState {
            device_id: id.to_string(),
            state,
        }));
        match state {
            ConnState::Connected => {
                let waiting = self.queued.remove(id).unwrap_or_default();
                for cmd in waiting {
                    self.dispatch(cmd);
                }
            }
            ConnState::Degraded => {}
            ConnState::Lost => {
                self.queued.remove(id);
                self.outstanding.retain(|_, d| d != id);
                self.follow_ups.push(EngineInput::DeviceLost {
                    device_id: id.to_string(),
                });
            }
        }
        self.drain_follow_ups();
        self.publish();
    }

    fn fire_timers(&mut self) {
        let now = Instant::now();
        let mut due: Vec<(Instant, String)> = Vec::new();
        self.timers.retain(|(t, row)| {
            let fire = *t <= now;
            if fire {
                due.push((*t, row.clone()));
            }
            !fire
        });
        due.sort();
        for (_, row_id) in due {
            let _ = self.step(EngineInput::TimerFired { row_id });
        }
    }

    fn step(&mut self, input: EngineInput) -> Result<(), EngineError> {
        let result = self.engine.step(input);
        match result {
            Ok(out) => {
                self.after_step(out);
                Ok(())
            }
            Err(e) => {
                self.flush_log();
                self.publish();
                Err(e)
            }
        }
    }

    fn after_step(&mut self, out: StepOutput) {
        self.flush_log();
        let now = Instant::now();
        for t in &out.timers {
            let wall_ms = if self.time_scale.is_finite() {
                t.delay_ms as f64 / self.time_scale
            } else {
                0.0
            };
            self.timers
                .push((now + Duration::from_secs_f64(wall_ms / 1000.0), t.row_id.clone()));
        }
        for cmd in out.commands {
            self.dispatch(cmd);
        }
        self.publish();
        self.drain_follow_ups();
    }

    fn drain_follow_ups(&mut self) {
        while !self.follow_ups.is_empty() {
            let input = self.follow_ups.remove(0);
            let _ = self.step(input);
        }
    }

    fn dispatch(&mut self, cmd: DeviceCommand) {
        let kind = cmd.body.kind();
        match self.sessions.get(&cmd.target) {
            Some((Some(conn), s)) if s.can_dispatch(kind) => {
                let conn = *conn;
                if cmd.expects_ack {
                    self.outstanding.insert(cmd.command_id, cmd.target.clone());
                }
                self.send(conn, Message::Command(cmd));
            }
            Some((_, s)) if s.state == ConnState::Lost || !s.can_perform(kind) => {
                if !s.can_perform(kind) {
                    warn!(device = %cmd.target, ?kind, "device lacks capability");
                }
                if cmd.expects_ack {
                    self.follow_ups.push(EngineInput::DeviceLost {
                        device_id: cmd.target.clone(),
                    });
                }
            }
            _ => self.queued.entry(cmd.target.clone()).or_default().push(cmd),
        }
    }

    fn flush_log(&mut self) {
        let entries = &self.engine.log().entries()[self.log_written..];
        if entries.is_empty() {
            return;
        }
        if let Some(sink) = self.log_sink.as_mut() {
            for e in entries {
                let _ = writeln!(sink, "{}", e.to_line());
            }
            let _ = sink.flush();
        }
        for op in &self.operators {
            for e in entries {
                self.send(*op, Message::Event(Event::Log { entry: e.clone() }));
            }
        }
        self.log_written = self.engine.log().len();
    }

    fn device_statuses(&self) -> BTreeMap<String, DeviceStatus> {
        self.engine
            .script()
            .devices
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    DeviceStatus {
                        role: d.role,
                        state: self.sessions.get(&d.id).map(|(_, s)| s.state),
                    },
                )
            })
            .collect()
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.latest.lock().unwrap())
    }

    fn publish(&mut self) {
        self.snapshot_seq += 1;
        let snap = Arc::new(Snapshot::of(
            &self.engine,
            self.snapshot_seq,
            self.now(),
            self.device_statuses(),
        ));
        *self.latest.lock().unwrap() = Arc::clone(&snap);
        self.subscribers
            .lock()
            .unwrap()
            .retain(|s| s.send(Arc::clone(&snap)).is_ok());
        self.to_operators(&Message::StateSnapshot(Box::new((*snap).clone())));
    }
}
