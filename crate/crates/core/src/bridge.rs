//! Line-delimited JSON protocol that lets an external program drive the
//! env-input agents of a simulated episode.
//!
//! Session: the client says `hello`, the server answers `hello` with the
//! observation layout. After `reset` the server sends `observation(t)`, the
//! client answers `action(t)`, the server steps and sends `result(t + 1)`
//! followed by `observation(t + 1)` unless the episode is over. `bye` ends the
//! session. Any protocol error is answered with one `error` line and the
//! session is closed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::db::Database;
use crate::error::{Error, Result};
use crate::metrics::EpisodeRecord;
use crate::scenario::ScenarioDescription;
use crate::sensing::{describe_observation, ObservationLayout};
use crate::sim::{Action, AgentInfo, SimConfig, Termination, World};

pub const PROTOCOL_VERSION: &str = "sfb/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Error codes carried by `error` messages.
pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const STALE_TICK: &str = "stale_tick";
    pub const TICK_MISMATCH: &str = "tick_mismatch";
    pub const UNEXPECTED: &str = "unexpected";
    pub const VERSION: &str = "version";
    pub const UNKNOWN_SCENARIO: &str = "unknown_scenario";
    pub const BAD_ACTION: &str = "bad_action";
    pub const TIMEOUT: &str = "timeout";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout: Option<ObservationLayout>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        scenarios: Vec<String>,
    },
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario_id: Option<String>,
    },
    Observation {
        scenario_id: String,
        tick: usize,
        observations: BTreeMap<String, Vec<f64>>,
    },
    Action {
        tick: usize,
        /// `[steer, accel]` per agent, each in [-1, 1].
        actions: BTreeMap<String, [f64; 2]>,
    },
    Result {
        tick: usize,
        rewards: BTreeMap<String, f64>,
        terminations: BTreeMap<String, Termination>,
        info: BTreeMap<String, AgentInfo>,
        done: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    Bye {},
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed line: {e}")))
    }

    fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

/// Where sessions get their scenarios from.
pub trait ScenarioProvider: Send + Sync {
    fn ids(&self) -> Vec<String>;
    fn load(&self, id: &str) -> Result<Arc<ScenarioDescription>>;
}

impl ScenarioProvider for Database {
    fn ids(&self) -> Vec<String> {
        Database::ids(self).map(str::to_string).collect()
    }

    fn load(&self, id: &str) -> Result<Arc<ScenarioDescription>> {
        self.read(id).map(Arc::new)
    }
}

impl ScenarioProvider for BTreeMap<String, Arc<ScenarioDescription>> {
    fn ids(&self) -> Vec<String> {
        self.keys().cloned().collect()
    }

    fn load(&self, id: &str) -> Result<Arc<ScenarioDescription>> {
        self.get(id).cloned().ok_or_else(|| Error::UnknownObject(id.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub sim: SimConfig,
    /// How long the server waits for the next client line.
    pub timeout: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// What happened to one episode of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub scenario_id: String,
    pub ticks: usize,
    pub aborted: bool,
    pub records: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session: String,
    pub episodes: Vec<EpisodeLog>,
    /// `bye`, `eof`, or the error code that closed the session.
    pub close_reason: String,
}

enum Incoming {
    Line(String),
    Eof,
}

/// Reads lines on a helper thread so the session can wait with a timeout.
fn spawn_reader<R: BufRead + Send + 'static>(reader: R) -> mpsc::Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(Incoming::Line(line)).is_err() {
                return;
            }
        }
        let _ = tx.send(Incoming::Eof);
    });
    rx
}

struct Session<'a, W: Write> {
    id: String,
    provider: &'a dyn ScenarioProvider,
    config: &'a BridgeConfig,
    out: W,
    world: Option<World>,
    scenario_id: String,
    next_scenario: usize,
    log: SessionLog,
}

enum Flow {
    Continue,
    Close(String),
}

impl<W: Write> Session<'_, W> {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.out
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))
    }

    fn fail(&mut self, code: &str, message: impl Into<String>) -> Flow {
        let _ = self.send(&Message::error(code, message));
        Flow::Close(code.to_string())
    }

    fn finish_episode(&mut self, aborted: bool) {
        if let Some(mut world) = self.world.take() {
            let aborted = aborted && !world.done();
            if aborted {
                world.abort();
            }
            self.log.episodes.push(EpisodeLog {
                scenario_id: self.scenario_id.clone(),
                ticks: world.tick(),
                aborted,
                records: world.episode_records(),
            });
        }
    }

    fn handle(&mut self, msg: Message, greeted: &mut bool) -> Flow {
        match msg {
            Message::Hello { protocol, .. } if !*greeted => {
                if protocol != PROTOCOL_VERSION {
                    return self.fail(codes::VERSION, format!("server speaks {PROTOCOL_VERSION}, client sent {protocol}"));
                }
                *greeted = true;
                let reply = Message::Hello {
                    protocol: PROTOCOL_VERSION.to_string(),
                    session: Some(self.id.clone()),
                    layout: Some(describe_observation(&self.config.sim.sensing)),
                    scenarios: self.provider.ids(),
                };
                match self.send(&reply) {
                    Ok(()) => Flow::Continue,
                    Err(_) => Flow::Close("write".into()),
                }
            }
            _ if !*greeted => self.fail(codes::UNEXPECTED, "expected hello"),
            Message::Reset { scenario_id } => {
                self.finish_episode(true);
                let ids = self.provider.ids();
                let id = match scenario_id {
                    Some(id) => id,
                    None if ids.is_empty() => return self.fail(codes::UNKNOWN_SCENARIO, "no scenarios available"),
                    None => {
                        let id = ids[self.next_scenario % ids.len()].clone();
                        self.next_scenario += 1;
                        id
                    }
                };
                let scenario = match self.provider.load(&id) {
                    Ok(s) => s,
                    Err(e) => return self.fail(codes::UNKNOWN_SCENARIO, format!("cannot load {id:?}: {e}")),
                };
                let (world, observations) = match World::reset(scenario, self.config.sim.clone()) {
                    Ok(w) => w,
                    Err(e) => return self.fail(codes::INTERNAL, format!("reset failed: {e}")),
                };
                self.scenario_id = id.clone();
                self.world = Some(world);
                let msg = Message::Observation {
                    scenario_id: id,
                    tick: 0,
                    observations,
                };
                match self.send(&msg) {
                    Ok(()) => Flow::Continue,
                    Err(_) => Flow::Close("write".into()),
                }
            }
            Message::Action { tick, actions } => self.step(tick, actions),
            Message::Bye {} => {
                self.finish_episode(true);
                let _ = self.send(&Message::Bye {});
                Flow::Close("bye".into())
            }
            other => {
                let kind = serde_json::to_value(&other).ok().and_then(|v| v["kind"].as_str().map(str::to_string));
                self.fail(codes::UNEXPECTED, format!("clients may not send {}", kind.unwrap_or_default()))
            }
        }
    }

    fn step(&mut self, tick: usize, actions: BTreeMap<String, [f64; 2]>) -> Flow {
        let Some(world) = self.world.as_mut() else {
            return self.fail(codes::UNEXPECTED, "action before reset");
        };
        if world.done() {
            return self.fail(codes::UNEXPECTED, "episode is over; send reset or bye");
        }
        let now = world.tick();
        if tick < now {
            return self.fail(codes::STALE_TICK, format!("stale tick: action for tick {tick}, expected {now}"));
        }
        if tick > now {
            return self.fail(codes::TICK_MISMATCH, format!("tick mismatch: action for tick {tick}, expected {now}"));
        }
        let mut warnings = Vec::new();
        let mut batch: BTreeMap<String, Action> = actions
            .into_iter()
            .map(|(id, [steer, accel])| (id, Action::new(steer, accel)))
            .collect();
        for id in world.live_agents() {
            if !batch.contains_key(&id) {
                warnings.push(format!("missing action for agent {id:?}; applied (0, 0)"));
                batch.insert(id, Action::default());
            }
        }
        let result = match world.step(&batch) {
            Ok(r) => r,
            Err(e) => return self.fail(codes::BAD_ACTION, e.to_string()),
        };
        let done = result.done;
        let reply = Message::Result {
            tick: result.tick,
            rewards: result.rewards,
            terminations: result.terminations,
            info: result.info,
            done,
            warnings,
        };
        if self.send(&reply).is_err() {
            return Flow::Close("write".into());
        }
        if done {
            self.finish_episode(false);
            return Flow::Continue;
        }
        let obs = Message::Observation {
            scenario_id: self.scenario_id.clone(),
            tick: result.tick,
            observations: result.observations,
        };
        match self.send(&obs) {
            Ok(()) => Flow::Continue,
            Err(_) => Flow::Close("write".into()),
        }
    }
}

/// Runs one session until `bye`, end of input, timeout or a protocol error.
pub fn run_session<R, W>(id: String, reader: R, writer: W, provider: &dyn ScenarioProvider, config: &BridgeConfig) -> SessionLog
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let rx = spawn_reader(reader);
    let mut session = Session {
        id: id.clone(),
        provider,
        config,
        out: writer,
        world: None,
        scenario_id: String::new(),
        next_scenario: 0,
        log: SessionLog {
            session: id,
            episodes: Vec::new(),
            close_reason: String::new(),
        },
    };
    let mut greeted = false;
    let reason = loop {
        let line = match rx.recv_timeout(config.timeout) {
            Ok(Incoming::Line(l)) => l,
            Ok(Incoming::Eof) | Err(RecvTimeoutError::Disconnected) => break "eof".to_string(),
            Err(RecvTimeoutError::Timeout) => {
                let secs = config.timeout.as_secs_f64();
                if let Flow::Close(r) = session.fail(codes::TIMEOUT, format!("no message within {secs} s")) {
                    break r;
                }
                unreachable!("fail always closes");
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let flow = match Message::parse(&line) {
            Ok(msg) => session.handle(msg, &mut greeted),
            Err(Error::Protocol(m)) => session.fail(codes::MALFORMED, m),
            Err(e) => session.fail(codes::MALFORMED, e.to_string()),
        };
        if let Flow::Close(r) = flow {
            break r;
        }
    };
    session.finish_episode(true);
    session.log.close_reason = reason;
    session.log
}

/// TCP listener that runs every connection as an independent session on its own thread.
pub struct BridgeServer {
    listener: TcpListener,
    provider: Arc<dyn ScenarioProvider>,
    config: Arc<BridgeConfig>,
    counter: Arc<AtomicUsize>,
    logs: Arc<Mutex<Vec<SessionLog>>>,
}

impl BridgeServer {
    pub fn bind(addr: impl ToSocketAddrs, provider: Arc<dyn ScenarioProvider>, config: BridgeConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Protocol(format!("cannot bind: {e}")))?;
        Ok(Self {
            listener,
            provider,
            config: Arc::new(config),
            counter: Arc::new(AtomicUsize::new(0)),
            logs: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::Protocol(format!("no local address: {e}")))
    }

    /// Logs of the sessions that have ended so far.
    pub fn session_logs(&self) -> Arc<Mutex<Vec<SessionLog>>> {
        Arc::clone(&self.logs)
    }

    fn handle_connection(&self, stream: TcpStream) {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let provider = Arc::clone(&self.provider);
        let config = Arc::clone(&self.config);
        let logs = Arc::clone(&self.logs);
        thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            let Ok(read_half) = stream.try_clone() else { return };
            let log = run_session(format!("s{n}"), BufReader::new(read_half), &stream, provider.as_ref(), &config);
            let _ = stream.shutdown(std::net::Shutdown::Both);
            logs.lock().unwrap_or_else(|e| e.into_inner()).push(log);
        });
    }

    /// Accepts connections forever.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            match stream {
                Ok(s) => self.handle_connection(s),
                Err(e) => return Err(Error::Protocol(format!("accept failed: {e}"))),
            }
        }
        Ok(())
    }

    pub fn spawn(self) -> JoinHandle<Result<()>> {
        thread::spawn(move || self.run())
    }
}

/// One session over standard input and output.
pub fn serve_stdio(provider: &dyn ScenarioProvider, config: &BridgeConfig) -> SessionLog {
    let stdin = BufReader::new(std::io::stdin());
    run_session("stdio".into(), stdin, std::io::stdout().lock(), provider, config)
}

/// Blocking client used by tests and examples.
pub struct BridgeClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pub layout: Option<ObservationLayout>,
    pub session: Option<String>,
}

/// Outcome of one client step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStep {
    pub result: Message,
    /// Next observation, absent when the episode ended.
    pub observation: Option<Message>,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Protocol(format!("connect failed: {e}")))?;
        let _ = stream.set_nodelay(true);
        let writer = stream
            .try_clone()
            .map_err(|e| Error::Protocol(format!("cannot clone stream: {e}")))?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            layout: None,
            session: None,
        })
    }

    pub fn send_line(&mut self, line: &str) -> Result<()> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let line = msg.to_line();
        self.send_line(line.trim_end())
    }

    /// Next message, or `None` once the server has closed the stream.
    pub fn recv(&mut self) -> Result<Option<Message>> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Protocol(format!("read failed: {e}")))?;
        if n == 0 {
            return Ok(None);
        }
        Message::parse(&line).map(Some)
    }

    fn expect(&mut self) -> Result<Message> {
        match self.recv()? {
            Some(Message::Error { code, message }) => Err(Error::Protocol(format!("{code}: {message}"))),
            Some(m) => Ok(m),
            None => Err(Error::Protocol("server closed the session".into())),
        }
    }

    pub fn hello(&mut self) -> Result<Vec<String>> {
        self.send(&Message::Hello {
            protocol: PROTOCOL_VERSION.to_string(),
            session: None,
            layout: None,
            scenarios: Vec::new(),
        })?;
        match self.expect()? {
            Message::Hello {
                session, layout, scenarios, ..
            } => {
                self.session = session;
                self.layout = layout;
                Ok(scenarios)
            }
            other => Err(Error::Protocol(format!("expected hello, got {other:?}"))),
        }
    }

    /// Starts an episode and returns the first observation message.
    pub fn reset(&mut self, scenario_id: Option<&str>) -> Result<Message> {
        self.send(&Message::Reset {
            scenario_id: scenario_id.map(str::to_string),
        })?;
        self.expect()
    }

    pub fn step(&mut self, tick: usize, actions: BTreeMap<String, [f64; 2]>) -> Result<ClientStep> {
        self.send(&Message::Action { tick, actions })?;
        let result = self.expect()?;
        let done = match &result {
            Message::Result { done, .. } => *done,
            other => return Err(Error::Protocol(format!("expected result, got {other:?}"))),
        };
        let observation = if done { None } else { Some(self.expect()?) };
        Ok(ClientStep { result, observation })
    }

    pub fn bye(&mut self) -> Result<()> {
        self.send(&Message::Bye {})?;
        match self.expect()? {
            Message::Bye {} => Ok(()),
            other => Err(Error::Protocol(format!("expected bye, got {other:?}"))),
        }
    }
}
