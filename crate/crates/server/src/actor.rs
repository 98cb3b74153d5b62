//! The simulation actor: sole owner of the session.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use tokio::sync::{mpsc, watch};
use tokio::time::MissedTickBehavior;
use tracing::{debug, info, warn};

use sve_core::geom::Pose;
use sve_core::harness::{Trace, TraceCursor, TraceRecorder};
use sve_core::session::{
    encode_message, ClientFrame, DropReason, Goodbye, Hello, Payload, SeqTracker, SessionError, SessionEvent,
    TickOutput, UserId, Welcome, WireMessage, PROTOCOL_VERSION, SPECTATOR,
};
use sve_core::{NavMesh, Session, SessionConfig};

pub type ConnId = u64;

/// Encoded frame, shared between every connection it is sent to.
pub type Frame = Arc<[u8]>;

/// Outbound queue depth per connection. A client this far behind is cut off.
pub const OUTBOX_DEPTH: usize = 1024;

#[derive(Debug)]
pub enum Command {
    Connect { conn: ConnId, outbox: mpsc::Sender<Frame> },
    Message { conn: ConnId, msg: WireMessage },
    Disconnect { conn: ConnId },
}

/// Where the session's input comes from.
#[derive(Debug)]
pub enum Mode {
    Live,
    /// Live, and the trace is written to the path on exit.
    Record(PathBuf),
    /// Trace frames replace network input; connections only watch.
    Replay(Trace),
}

#[derive(Debug, Default)]
pub struct Summary {
    pub ticks: u64,
    /// The recorded trace, in record mode.
    pub trace: Option<Trace>,
}

enum Driver {
    Live(Session),
    Record(TraceRecorder, PathBuf),
    Replay(TraceCursor),
}

impl Driver {
    fn session(&self) -> &Session {
        match self {
            Driver::Live(s) => s,
            Driver::Record(r, _) => r.session(),
            Driver::Replay(c) => c.session(),
        }
    }

    fn join(&mut self, hello: &Hello) -> Result<UserId, SessionError> {
        let spawn = Pose::at(self.session().config().spawn);
        match self {
            Driver::Live(s) => s.join_at(hello, spawn),
            Driver::Record(r, _) => r.join(hello, spawn).map_err(|e| SessionError::InvalidConfig(e.to_string())),
            Driver::Replay(_) => Ok(SPECTATOR),
        }
    }

    fn leave(&mut self, id: UserId) {
        let res = match self {
            Driver::Live(s) => s.leave(id).map_err(anyhow::Error::from),
            Driver::Record(r, _) => r.leave(id).map_err(anyhow::Error::from),
            Driver::Replay(_) => Ok(()),
        };
        if let Err(e) = res {
            warn!(user = id, "leave failed: {e}");
        }
    }

    /// `None` once a replay runs out.
    fn tick(&mut self, frames: Vec<ClientFrame>) -> anyhow::Result<Option<TickOutput>> {
        Ok(match self {
            Driver::Live(s) => Some(s.tick(frames)),
            Driver::Record(r, _) => Some(r.tick(frames)),
            Driver::Replay(c) => c.step()?,
        })
    }
}

struct Client {
    outbox: mpsc::Sender<Frame>,
    user: Option<UserId>,
}

pub struct Actor {
    driver: Driver,
    clients: BTreeMap<ConnId, Client>,
    seqs: SeqTracker<ConnId>,
    pending: Vec<ClientFrame>,
    out_seq: u64,
    max_ticks: Option<u64>,
}

impl Actor {
    pub fn new(cfg: SessionConfig, mesh: NavMesh, mode: Mode, max_ticks: Option<u64>) -> anyhow::Result<Self> {
        let driver = match mode {
            Mode::Live => Driver::Live(Session::new(cfg, mesh)?),
            Mode::Record(path) => Driver::Record(TraceRecorder::new(cfg, mesh)?, path),
            Mode::Replay(trace) => Driver::Replay(TraceCursor::new(trace)?),
        };
        Ok(Self {
            driver,
            clients: BTreeMap::new(),
            seqs: SeqTracker::new(),
            pending: Vec::new(),
            out_seq: 0,
            max_ticks,
        })
    }

    pub fn tick_rate(&self) -> f64 {
        self.driver.session().config().tick_rate
    }

    /// Runs until shutdown, the tick limit, or the end of a replay.
    pub async fn run(mut self, mut commands: mpsc::Receiver<Command>, mut shutdown: watch::Receiver<bool>) -> anyhow::Result<Summary> {
        let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / self.tick_rate()));
        interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let reason = loop {
            tokio::select! {
                biased;
                _ = shutdown.changed() => break "server shutting down",
                Some(cmd) = commands.recv() => self.handle(cmd),
                _ = interval.tick() => {
                    if self.max_ticks.is_some_and(|m| self.driver.session().tick_count() >= m) {
                        break "tick limit reached";
                    }
                    let frames = std::mem::take(&mut self.pending);
                    match self.driver.tick(frames)? {
                        Some(out) => self.publish(out),
                        None => break "replay finished",
                    }
                }
            }
        };
        info!(ticks = self.driver.session().tick_count(), "{reason}");
        let conns: Vec<ConnId> = self.clients.keys().copied().collect();
        for conn in conns {
            self.send_goodbye(conn, reason);
        }
        let ticks = self.driver.session().tick_count();
        let trace = match self.driver {
            Driver::Record(recorder, path) => {
                let trace = recorder.finish();
                trace.save(&path).with_context(|| format!("writing trace {}", path.display()))?;
                Some(trace)
            }
            _ => None,
        };
        Ok(Summary { ticks, trace })
    }

    pub fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Connect { conn, outbox } => {
                self.clients.insert(conn, Client { outbox, user: None });
            }
            Command::Disconnect { conn } => self.drop_client(conn),
            Command::Message { conn, msg } => self.on_message(conn, msg),
        }
    }

    fn on_message(&mut self, conn: ConnId, msg: WireMessage) {
        let Some(client) = self.clients.get(&conn) else {
            return;
        };
        let user = client.user;
        if let Err(e) = self.seqs.check(conn, msg.seq) {
            debug!(conn, "{e}");
            self.drop_frame(conn, user.unwrap_or(SPECTATOR), msg.seq, DropReason::SeqRegression);
            return;
        }
        match msg.payload {
            Payload::Hello(hello) if user.is_none() => self.on_hello(conn, hello),
            Payload::Hello(_) => debug!(conn, "repeated hello ignored"),
            Payload::InputFrame(frame) => {
                if user.is_some_and(|u| u == frame.user_id && u != SPECTATOR) {
                    self.pending.push(ClientFrame { seq: msg.seq, frame });
                } else {
                    self.drop_frame(conn, frame.user_id, msg.seq, DropReason::UnknownUser);
                }
            }
            Payload::Goodbye(_) => {
                self.send_goodbye(conn, "bye");
                self.drop_client(conn);
            }
            other => debug!(conn, "ignoring client {} message", other.type_name()),
        }
    }

    fn on_hello(&mut self, conn: ConnId, hello: Hello) {
        match self.driver.join(&hello) {
            Ok(user_id) => {
                if let Some(client) = self.clients.get_mut(&conn) {
                    client.user = Some(user_id);
                }
                info!(conn, user = user_id, name = %hello.name, "joined");
                let session = self.driver.session();
                let welcome = Payload::Welcome(Welcome {
                    user_id,
                    protocol_version: PROTOCOL_VERSION,
                    tick_rate: session.config().tick_rate,
                    snapshot: session.snapshot(),
                });
                self.send(conn, welcome);
            }
            Err(e) => {
                let reason = match e {
                    SessionError::SessionFull(_) => DropReason::SessionFull,
                    SessionError::VersionMismatch { .. } => DropReason::VersionMismatch,
                    _ => DropReason::UnknownUser,
                };
                warn!(conn, "hello rejected: {e}");
                self.drop_frame(conn, hello.user_id.unwrap_or(SPECTATOR), 0, reason);
                self.send_goodbye(conn, &e.to_string());
                self.clients.remove(&conn);
            }
        }
    }

    fn drop_frame(&mut self, conn: ConnId, user_id: UserId, seq: u64, reason: DropReason) {
        self.send(conn, Payload::Event(SessionEvent::Dropped { user_id, seq, reason }));
    }

    fn send_goodbye(&mut self, conn: ConnId, reason: &str) {
        let user_id = self.clients.get(&conn).and_then(|c| c.user);
        self.send(
            conn,
            Payload::Goodbye(Goodbye {
                user_id,
                reason: reason.into(),
            }),
        );
    }

    fn drop_client(&mut self, conn: ConnId) {
        if let Some(client) = self.clients.remove(&conn) {
            if let Some(user) = client.user.filter(|&u| u != SPECTATOR) {
                self.driver.leave(user);
            }
        }
    }

    fn frame(&mut self, payload: Payload) -> Frame {
        self.out_seq += 1;
        let tick = self.driver.session().tick_count();
        encode_message(&WireMessage::new(self.out_seq, tick, payload)).into()
    }

    fn send(&mut self, conn: ConnId, payload: Payload) {
        let frame = self.frame(payload);
        if let Some(client) = self.clients.get(&conn) {
            if client.outbox.try_send(frame).is_err() {
                warn!(conn, "outbox full or closed");
            }
        }
    }

    fn publish(&mut self, out: TickOutput) {
        let mut frames = vec![self.frame(Payload::Snapshot(out.snapshot))];
        for event in out.events {
            frames.push(self.frame(Payload::Event(event)));
        }
        let mut lagging = Vec::new();
        for (&conn, client) in &self.clients {
            for f in &frames {
                if client.outbox.try_send(f.clone()).is_err() {
                    lagging.push(conn);
                    break;
                }
            }
        }
        for conn in lagging {
            warn!(conn, "client fell behind, disconnecting");
            self.drop_client(conn);
        }
    }
}
