//! The mock PLC: protocol state machine, TCP listener, and square-wave
//! output emitter.
//!
//! One client connection is served at a time; concurrent connect attempts
//! queue at the listener. The protocol handler and the edge emitter share
//! one state guard. All timestamps come from an injected [`Clock`], so a
//! [`VirtualClock`] drives the device deterministically in tests: its
//! registered ticker performs due edge emission and reboot recovery
//! synchronously inside every clock advance.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{self, ReplyStatus};
use super::{DeviceConfig, Vulnerability};
use crate::clock::{Clock, Nanos, VirtualClock};
use crate::monitor::{Edge, Level};

/// Lifecycle phase of the device's protocol session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitInit,
    AwaitAck,
    Ready,
    Rebooting,
    Crashed,
}

/// Square-wave output generator state.
struct EdgeGen {
    enabled: bool,
    next_ts: Nanos,
    next_level: Level,
    half: Nanos,
    /// Remaining half-cycles stretched to 1.5x nominal (load delay).
    stretched_halves: u32,
}

impl EdgeGen {
    fn emit_due(&mut self, now: Nanos, out: &mut Vec<Edge>) {
        while self.enabled && self.next_ts <= now {
            out.push(Edge {
                timestamp: self.next_ts,
                level: self.next_level,
            });
            let step = if self.stretched_halves > 0 {
                self.stretched_halves -= 1;
                self.half + self.half / 2
            } else {
                self.half
            };
            self.next_ts += step;
            self.next_level = self.next_level.flip();
        }
    }
}

struct Core {
    phase: Phase,
    session_token: u8,
    handshake_count: u64,
    variables: BTreeMap<u16, u16>,
    reboot_at: Option<Nanos>,
    listener: Option<TcpListener>,
    edges: EdgeGen,
    taps: Vec<mpsc::Sender<Edge>>,
}

struct Shared {
    config: DeviceConfig,
    clock: Arc<dyn Clock>,
    core: Mutex<Core>,
    device_addr: SocketAddr,
    scope_addr: SocketAddr,
    shutdown: AtomicBool,
}

/// Handle to a running mock device.
pub struct MockDevice {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

const ACCEPT_POLL: Duration = Duration::from_micros(500);
/// Wall-clock guard on partial frames; under a virtual clock the client
/// half-closes instead, so this never decides test behavior.
const READ_TIMEOUT: Duration = Duration::from_secs(2);

impl MockDevice {
    /// Start the device on the configured ports (0 picks ephemeral ones).
    /// The caller chooses the time source; pair with
    /// [`spawn_realtime_ticker`](Self::spawn_realtime_ticker) for a system
    /// clock or [`attach_to_virtual_clock`](Self::attach_to_virtual_clock)
    /// for tests.
    pub fn start(config: DeviceConfig, clock: Arc<dyn Clock>) -> std::io::Result<Self> {
        config.validate().map_err(std::io::Error::other)?;
        let listener = bind(config.listen_port)?;
        let scope_listener = bind(config.scope_port)?;
        let device_addr = listener.local_addr()?;
        let scope_addr = scope_listener.local_addr()?;
        listener.set_nonblocking(true)?;
        scope_listener.set_nonblocking(true)?;

        let now = clock.now();
        let half = config.cycle_period_ns / 2;
        let core = Core {
            phase: Phase::AwaitInit,
            session_token: config.token,
            handshake_count: 0,
            variables: BTreeMap::new(),
            reboot_at: None,
            listener: Some(listener),
            edges: EdgeGen {
                enabled: true,
                next_ts: now + half,
                next_level: Level::High,
                half,
                stretched_halves: 0,
            },
            taps: Vec::new(),
        };
        let shared = Arc::new(Shared {
            config,
            clock,
            core: Mutex::new(core),
            device_addr,
            scope_addr,
            shutdown: AtomicBool::new(false),
        });

        let mut threads = Vec::new();
        let s = shared.clone();
        threads.push(std::thread::spawn(move || protocol_loop(&s)));
        let s = shared.clone();
        threads.push(std::thread::spawn(move || scope_loop(&s, scope_listener)));

        Ok(Self { shared, threads })
    }

    /// Convenience: start with the system clock and a real-time ticker.
    pub fn start_realtime(config: DeviceConfig) -> std::io::Result<Self> {
        let mut device = Self::start(config, Arc::new(crate::clock::SystemClock))?;
        device.spawn_realtime_ticker();
        Ok(device)
    }

    /// Start and drive the device from a virtual clock's advances.
    pub fn start_virtual(config: DeviceConfig, clock: Arc<VirtualClock>) -> std::io::Result<Self> {
        let device = Self::start(config, clock.clone())?;
        device.attach_to_virtual_clock(&clock);
        Ok(device)
    }

    /// Register this device's due-work processing as a virtual-clock
    /// ticker, so every `advance` emits due edges and completes due
    /// reboots before returning.
    pub fn attach_to_virtual_clock(&self, clock: &VirtualClock) {
        let weak = Arc::downgrade(&self.shared);
        clock.register_ticker(Box::new(move |now| {
            if let Some(shared) = weak.upgrade() {
                tick(&shared, now);
            }
        }));
    }

    /// Spawn a thread calling the ticker on real time.
    pub fn spawn_realtime_ticker(&mut self) {
        let weak = Arc::downgrade(&self.shared);
        self.threads.push(std::thread::spawn(move || {
            while let Some(shared) = weak.upgrade() {
                if shared.shutdown.load(Ordering::SeqCst) {
                    return;
                }
                let now = shared.clock.now();
                tick(&shared, now);
                drop(shared);
                std::thread::sleep(Duration::from_millis(1));
            }
        }));
    }

    /// Run due work (edge emission, reboot recovery) up to `now`.
    pub fn tick_now(&self) {
        tick(&self.shared, self.shared.clock.now());
    }

    pub fn device_addr(&self) -> SocketAddr {
        self.shared.device_addr
    }

    pub fn scope_addr(&self) -> SocketAddr {
        self.shared.scope_addr
    }

    pub fn phase(&self) -> Phase {
        self.shared.core.lock().unwrap().phase
    }

    pub fn variable(&self, addr: u16) -> Option<u16> {
        self.shared.core.lock().unwrap().variables.get(&addr).copied()
    }

    /// Subscribe to the output edge stream from now on.
    pub fn tap_edges(&self) -> mpsc::Receiver<Edge> {
        let (tx, rx) = mpsc::channel();
        self.shared.core.lock().unwrap().taps.push(tx);
        rx
    }

    /// Process restart after a crash: fresh protocol state, listener
    /// rebound before returning, output resumes legally (the first edge
    /// continues the alternation).
    pub fn restart(&self) -> std::io::Result<()> {
        let mut core = self.shared.core.lock().unwrap();
        let listener = TcpListener::bind(self.shared.device_addr)?;
        listener.set_nonblocking(true)?;
        core.listener = Some(listener);
        core.phase = Phase::AwaitInit;
        core.session_token = self.shared.config.token;
        core.handshake_count = 0;
        core.variables.clear();
        core.reboot_at = None;
        core.edges.enabled = true;
        core.edges.stretched_halves = 0;
        core.edges.next_ts = self.shared.clock.now() + core.edges.half;
        Ok(())
    }

    /// Stop threads and release the ports.
    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.core.lock().unwrap().listener = None;
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockDevice {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Ok(mut core) = self.shared.core.lock() {
            core.listener = None;
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn bind(port: u16) -> std::io::Result<TcpListener> {
    TcpListener::bind((Ipv4Addr::LOCALHOST, port))
}

/// Due-work processing shared by the virtual-clock ticker and the
/// real-time ticker thread.
fn tick(shared: &Shared, now: Nanos) {
    let mut due = Vec::new();
    {
        let mut core = shared.core.lock().unwrap();
        if let Some(at) = core.reboot_at {
            if now >= at {
                core.reboot_at = None;
                core.phase = Phase::AwaitInit;
                core.session_token = shared.config.token;
                // The controller is back: output resumes half a cycle after
                // recovery, continuing the interrupted alternation.
                core.edges.enabled = true;
                core.edges.next_ts = at + core.edges.half;
                if let Ok(listener) = TcpListener::bind(shared.device_addr) {
                    let _ = listener.set_nonblocking(true);
                    core.listener = Some(listener);
                }
            }
        }
        core.edges.emit_due(now, &mut due);
        if !due.is_empty() {
            let edges = due.clone();
            core.taps.retain(|tap| edges.iter().all(|e| tap.send(*e).is_ok()));
        }
    }
}

/// Accept loop: serves one connection at a time.
fn protocol_loop(shared: &Shared) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        let conn = {
            let core = shared.core.lock().unwrap();
            match &core.listener {
                Some(listener) => match listener.accept() {
                    Ok((stream, _)) => Some(stream),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => None,
                    Err(_) => None,
                },
                None => None,
            }
        };
        match conn {
            Some(stream) => handle_connection(shared, stream),
            None => std::thread::sleep(ACCEPT_POLL),
        }
    }
}

/// What the state machine wants done with the connection after a frame.
enum Action {
    Reply(Vec<u8>),
    ReplyThenClose(Vec<u8>),
    /// Crash: no reply, connection dropped, device dead until restart.
    Close,
}

fn handle_connection(shared: &Shared, stream: TcpStream) {
    serve_connection(shared, stream);
    // Session state is bound to the connection: a new client starts from
    // the handshake again. Reboot and crash outlive the connection.
    let mut core = shared.core.lock().unwrap();
    if matches!(core.phase, Phase::AwaitAck | Phase::Ready) {
        core.phase = Phase::AwaitInit;
    }
}

fn serve_connection(shared: &Shared, mut stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(READ_TIMEOUT));
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 4096];
    let mut eof = false;

    'conn: loop {
        // Assemble the 4-byte header, then the declared frame.
        while buf.len() < 4 && !eof {
            eof = !read_chunk(&mut stream, &mut chunk, &mut buf);
        }
        if buf.len() < 4 {
            if !buf.is_empty() {
                let _ = stream.write_all(&wire::malformed_reply());
            }
            return;
        }
        let declared = wire::declared_len(&buf).expect("4 bytes buffered");
        if declared < 4 {
            let _ = stream.write_all(&wire::malformed_reply());
            return;
        }
        while buf.len() < declared && !eof {
            eof = !read_chunk(&mut stream, &mut chunk, &mut buf);
        }
        if buf.len() < declared {
            // Short frame at end of input: the declared length overruns
            // what was actually sent.
            let excess = declared - buf.len();
            let has_v2 = shared.config.vulnerabilities.contains(&Vulnerability::LengthCrash);
            if has_v2 && excess > 16 {
                crash(shared);
                return;
            }
            let class = buf[1];
            let sub = wire::subcode(&buf).unwrap_or(0);
            let _ = stream.write_all(&wire::reply(class, sub, ReplyStatus::LengthMismatch, 0));
            return;
        }
        let frame: Vec<u8> = buf.drain(..declared).collect();
        match process_frame(shared, &frame) {
            Action::Reply(r) => {
                if stream.write_all(&r).is_err() {
                    return;
                }
            }
            Action::ReplyThenClose(r) => {
                let _ = stream.write_all(&r);
                return;
            }
            Action::Close => return,
        }
        if eof && buf.is_empty() {
            break 'conn;
        }
    }
}

/// Read once into `buf`; false on EOF, error, or the wall-clock guard.
fn read_chunk(stream: &mut TcpStream, chunk: &mut [u8; 4096], buf: &mut Vec<u8>) -> bool {
    match stream.read(chunk) {
        Ok(0) => false,
        Ok(n) => {
            buf.extend_from_slice(&chunk[..n]);
            true
        }
        Err(_) => false,
    }
}

fn crash(shared: &Shared) {
    let mut core = shared.core.lock().unwrap();
    core.phase = Phase::Crashed;
    core.listener = None;
    core.reboot_at = None;
    core.edges.enabled = false;
}

fn process_frame(shared: &Shared, frame: &[u8]) -> Action {
    let mut core = shared.core.lock().unwrap();
    let config = &shared.config;

    if frame[0] != wire::DIR_CLIENT {
        return Action::Reply(wire::malformed_reply().to_vec());
    }
    let class = frame[1];
    let sub = wire::subcode(frame).unwrap_or(0);
    let err = |status: ReplyStatus| Action::Reply(wire::reply(class, sub, status, 0).to_vec());

    match core.phase {
        Phase::AwaitInit => {
            let is_init = class == wire::CLASS_INIT
                && frame.len() == wire::INIT_REQUEST.len()
                && frame[14..26] == wire::INIT_IDENT[..];
            if !is_init {
                return err(ReplyStatus::BadState);
            }
            core.handshake_count += 1;
            core.session_token = if config.vulnerabilities.contains(&Vulnerability::ReplayAccepted)
            {
                // The real device's flaw: the token never changes.
                config.token
            } else {
                rotated_token(config.token, core.handshake_count)
            };
            core.phase = Phase::AwaitAck;
            Action::Reply(wire::init_response(core.session_token).to_vec())
        }
        Phase::AwaitAck => {
            let is_ack_shape = class == wire::CLASS_COMMAND
                && frame.len() == 22
                && sub == wire::SUBCODE_STATUS;
            if !is_ack_shape {
                return err(ReplyStatus::BadState);
            }
            if frame[wire::TOKEN_OFFSET_COMMAND] != core.session_token {
                return err(ReplyStatus::BadToken);
            }
            core.phase = Phase::Ready;
            // The ack itself is not answered; the next command is.
            Action::Reply(Vec::new())
        }
        Phase::Ready => {
            if class != wire::CLASS_COMMAND {
                return err(ReplyStatus::BadState);
            }
            if frame.len() <= wire::TOKEN_OFFSET_COMMAND {
                return err(ReplyStatus::Malformed);
            }
            let token_ok = frame[wire::TOKEN_OFFSET_COMMAND] == core.session_token;
            if !token_ok {
                let v3 = config.vulnerabilities.contains(&Vulnerability::UnauthReset);
                if !(v3 && sub == wire::SUBCODE_RESET) {
                    return err(ReplyStatus::BadToken);
                }
                // Unauthenticated reset executes anyway.
            }
            match sub {
                wire::SUBCODE_STATUS => {
                    Action::Reply(wire::reply(class, sub, ReplyStatus::Ok, 0).to_vec())
                }
                wire::SUBCODE_RESET => {
                    let now = shared.clock.now();
                    core.phase = Phase::Rebooting;
                    core.reboot_at = Some(now + config.reboot_duration_ns);
                    core.listener = None;
                    core.edges.enabled = false;
                    Action::ReplyThenClose(wire::reply(class, sub, ReplyStatus::Ok, 0).to_vec())
                }
                wire::SUBCODE_READ_VAR => {
                    if frame.len() < 16 {
                        return err(ReplyStatus::Malformed);
                    }
                    let addr = u16::from_be_bytes([frame[12], frame[13]]);
                    let value = core.variables.get(&addr).copied().unwrap_or(0);
                    Action::Reply(wire::reply(class, sub, ReplyStatus::Ok, value).to_vec())
                }
                wire::SUBCODE_WRITE_VAR => {
                    if frame.len() < 16 {
                        return err(ReplyStatus::Malformed);
                    }
                    let addr = u16::from_be_bytes([frame[12], frame[13]]);
                    let value = u16::from_be_bytes([frame[14], frame[15]]);
                    core.variables.insert(addr, value);
                    if addr == wire::LOAD_DELAY_ADDR
                        && config.vulnerabilities.contains(&Vulnerability::LoadDelay)
                    {
                        // High load: the next five output cycles run half
                        // again as long.
                        core.edges.stretched_halves = 10;
                    }
                    Action::Reply(wire::reply(class, sub, ReplyStatus::Ok, value).to_vec())
                }
                _ => err(ReplyStatus::UnknownSubcode),
            }
        }
        // No connections exist in these phases; the listener is down.
        Phase::Rebooting | Phase::Crashed => Action::Close,
    }
}

/// Per-session token when the replay flaw is fixed: deterministic, never
/// equal to the base token.
fn rotated_token(base: u8, handshake_count: u64) -> u8 {
    let candidate = base
        .wrapping_add(0x33)
        .wrapping_add((handshake_count as u8).wrapping_mul(0x55));
    if candidate == base {
        candidate.wrapping_add(1)
    } else {
        candidate
    }
}

/// Scope port: every client gets the edge stream from its connect time on.
fn scope_loop(shared: &Shared, listener: TcpListener) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let rx = {
                    let (tx, rx) = mpsc::channel();
                    shared.core.lock().unwrap().taps.push(tx);
                    rx
                };
                std::thread::spawn(move || stream_edges(stream, rx));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(ACCEPT_POLL)
            }
            Err(_) => std::thread::sleep(ACCEPT_POLL),
        }
    }
}

fn stream_edges(mut stream: TcpStream, rx: mpsc::Receiver<Edge>) {
    let _ = stream.set_nodelay(true);
    while let Ok(edge) = rx.recv() {
        if stream.write_all(edge.to_record().as_bytes()).is_err() {
            return;
        }
    }
}
