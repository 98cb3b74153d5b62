//! Session traces: a JSON-lines schedule of joins, input frames and leaves
//! keyed by session tick.
//!
//! A record with `tick = k` is applied while the session is at tick `k`,
//! before it steps to `k + 1`. Ticks never decrease through the file. The
//! optional header carries the configuration and mesh so a trace replays on
//! its own.
//!
//! ```text
//! {"record":"header","version":1,"config":{..},"mesh":{..},"subject":1}
//! {"record":"join","tick":0,"hello":{"user_id":1,"name":"a"},"origin":{"position":[0,0,0],"yaw":0}}
//! {"record":"input","tick":0,"seq":1,"frame":{"user_id":1,"sample":{"t":0}}}
//! {"record":"end","tick":600}
//! ```
//!
//! A file of bare input samples (the locomotion trace format) is accepted
//! too: it becomes one default user whose sample at time `t` lands on tick
//! `round(t * tick_rate)`.

use std::io::{BufRead, Write};

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geom::Pose;
use crate::locomotion::InputSample;
use crate::navmesh::NavMesh;
use crate::session::{ClientFrame, Hello, InputFrame, Session, SessionConfig, TickOutput, UserId, PROTOCOL_VERSION};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    #[serde(default)]
    pub config: SessionConfig,
    #[serde(default = "default_mesh")]
    pub mesh: NavMesh,
    /// User the metrics describe; defaults to the first to join.
    #[serde(default)]
    pub subject: Option<UserId>,
    #[serde(default)]
    pub scenario: Option<String>,
}

/// Flat 200 m square used when a trace brings no mesh.
pub fn default_mesh() -> NavMesh {
    NavMesh::rectangle(DVec2::splat(-100.0), DVec2::splat(100.0), 2, 2).expect("valid rectangle")
}

impl Default for TraceHeader {
    fn default() -> Self {
        Self {
            version: TRACE_VERSION,
            config: SessionConfig::default(),
            mesh: default_mesh(),
            subject: None,
            scenario: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Join { tick: u64, hello: Hello, origin: Pose },
    Input { tick: u64, seq: u64, frame: InputFrame },
    Leave { tick: u64, user_id: UserId },
    /// Session tick the replay runs up to.
    End { tick: u64 },
}

impl TraceRecord {
    pub fn tick(&self) -> Option<u64> {
        match self {
            TraceRecord::Header(_) => None,
            TraceRecord::Join { tick, .. }
            | TraceRecord::Input { tick, .. }
            | TraceRecord::Leave { tick, .. }
            | TraceRecord::End { tick } => Some(*tick),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub header: TraceHeader,
    /// Tick-ordered records, header excluded.
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    /// Number of ticks a replay runs.
    pub fn duration_ticks(&self) -> u64 {
        self.records
            .iter()
            .map(|r| match r {
                TraceRecord::End { tick } => *tick,
                other => other.tick().map_or(0, |t| t + 1),
            })
            .max()
            .unwrap_or(0)
    }

    pub fn subject(&self) -> Option<UserId> {
        self.header.subject.or_else(|| {
            self.records.iter().find_map(|r| match r {
                TraceRecord::Join { hello, .. } => hello.user_id,
                _ => None,
            })
        })
    }

    pub fn push(&mut self, record: TraceRecord) {
        if let (Some(new), Some(last)) = (record.tick(), self.records.last().and_then(TraceRecord::tick)) {
            debug_assert!(new >= last, "trace ticks must not decrease");
        }
        self.records.push(record);
    }

    pub fn write(&self, mut writer: impl Write) -> std::io::Result<()> {
        let header = TraceRecord::Header(self.header.clone());
        writeln!(writer, "{}", serde_json::to_string(&header).map_err(std::io::Error::other)?)?;
        for record in &self.records {
            writeln!(writer, "{}", serde_json::to_string(record).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    /// Parses either trace flavor; an empty input is an empty trace.
    pub fn read(reader: impl BufRead) -> Result<Self, HarnessError> {
        let mut lines = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push((index + 1, line));
            }
        }
        let Some((_, first)) = lines.first() else {
            return Ok(Self::default());
        };
        let is_session_trace = serde_json::from_str::<serde_json::Value>(first)
            .ok()
            .is_some_and(|v| v.get("record").is_some());
        if is_session_trace {
            Self::parse_records(&lines)
        } else {
            Self::parse_samples(&lines)
        }
    }

    fn parse_records(lines: &[(usize, String)]) -> Result<Self, HarnessError> {
        let mut trace = Trace::default();
        let mut last_tick = 0;
        for (i, (line_no, line)) in lines.iter().enumerate() {
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| corrupt(*line_no, e.to_string()))?;
            match record {
                TraceRecord::Header(header) => {
                    if i != 0 {
                        return Err(corrupt(*line_no, "header must be the first record".into()));
                    }
                    if header.version != TRACE_VERSION {
                        return Err(corrupt(*line_no, format!("unsupported trace version {}", header.version)));
                    }
                    trace.header = header;
                }
                record => {
                    let tick = record.tick().expect("non-header records carry a tick");
                    if tick < last_tick {
                        return Err(corrupt(*line_no, format!("tick {tick} after tick {last_tick}")));
                    }
                    last_tick = tick;
                    trace.records.push(record);
                }
            }
        }
        Ok(trace)
    }

    fn parse_samples(lines: &[(usize, String)]) -> Result<Self, HarnessError> {
        let mut trace = Trace::default();
        let rate = trace.header.config.tick_rate;
        let user_id = 1;
        trace.records.push(TraceRecord::Join {
            tick: 0,
            hello: Hello {
                user_id: Some(user_id),
                name: "trace".into(),
                protocol_version: PROTOCOL_VERSION,
                technique: None,
            },
            origin: Pose::default(),
        });
        let mut last_t = f64::NEG_INFINITY;
        let mut last_tick = 0;
        for (seq, (line_no, line)) in lines.iter().enumerate() {
            let sample: InputSample = serde_json::from_str(line).map_err(|e| corrupt(*line_no, e.to_string()))?;
            if !sample.t.is_finite() || sample.t < 0.0 {
                return Err(corrupt(*line_no, format!("invalid timestamp {}", sample.t)));
            }
            if sample.t <= last_t {
                return Err(corrupt(*line_no, format!("timestamp {} does not follow {}", sample.t, last_t)));
            }
            last_t = sample.t;
            last_tick = (sample.t * rate).round() as u64;
            trace.records.push(TraceRecord::Input {
                tick: last_tick,
                seq: seq as u64 + 1,
                frame: InputFrame {
                    user_id,
                    sample,
                    teleport_to: None,
                    technique: None,
                },
            });
        }
        trace.records.push(TraceRecord::End { tick: last_tick + 1 });
        trace.header.subject = Some(user_id);
        Ok(trace)
    }
}

fn corrupt(line: usize, message: String) -> HarnessError {
    HarnessError::CorruptTrace { line, message }
}

/// Drives a session from a trace, calling `observe` after every tick.
pub fn replay_with(
    trace: &Trace,
    mut observe: impl FnMut(&Session, &TickOutput),
) -> Result<Session, HarnessError> {
    let mut cursor = TraceCursor::new(trace.clone())?;
    while let Some(out) = cursor.step()? {
        observe(cursor.session(), &out);
    }
    Ok(cursor.into_session())
}

/// Steps a session through a trace one tick at a time.
#[derive(Debug)]
pub struct TraceCursor {
    session: Session,
    records: std::iter::Peekable<std::vec::IntoIter<TraceRecord>>,
    ticks: u64,
}

impl TraceCursor {
    pub fn new(trace: Trace) -> Result<Self, HarnessError> {
        let ticks = trace.duration_ticks();
        let session = Session::new(trace.header.config, trace.header.mesh)?;
        Ok(Self {
            session,
            records: trace.records.into_iter().peekable(),
            ticks,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn remaining_ticks(&self) -> u64 {
        self.ticks.saturating_sub(self.session.tick_count())
    }

    /// Applies the records due at the current tick and advances once.
    /// Returns `None` after the trace's last tick.
    pub fn step(&mut self) -> Result<Option<TickOutput>, HarnessError> {
        let tick = self.session.tick_count();
        if tick >= self.ticks {
            return Ok(None);
        }
        let mut frames = Vec::new();
        while let Some(record) = self.records.next_if(|r| r.tick().is_some_and(|t| t <= tick)) {
            match record {
                TraceRecord::Join { hello, origin, .. } => {
                    self.session.join_at(&hello, origin)?;
                }
                TraceRecord::Leave { user_id, .. } => self.session.leave(user_id)?,
                TraceRecord::Input { seq, frame, .. } => frames.push(ClientFrame { seq, frame }),
                TraceRecord::Header(_) | TraceRecord::End { .. } => {}
            }
        }
        Ok(Some(self.session.tick(frames)))
    }
}

/// Replays a trace and returns every tick's output.
pub fn replay_trace(trace: &Trace) -> Result<Vec<TickOutput>, HarnessError> {
    let mut outputs = Vec::new();
    replay_with(trace, |_, out| outputs.push(out.clone()))?;
    Ok(outputs)
}

/// Snapshot stream in canonical form: one JSON document per tick.
pub fn canonical_snapshots(outputs: &[TickOutput]) -> Vec<u8> {
    let mut bytes = Vec::new();
    for out in outputs {
        serde_json::to_writer(&mut bytes, &out.snapshot).expect("snapshots serialize");
        bytes.push(b'\n');
    }
    bytes
}

/// Wraps a live session and writes everything it is fed into a trace.
pub struct TraceRecorder {
    session: Session,
    trace: Trace,
}

impl TraceRecorder {
    pub fn new(config: SessionConfig, mesh: NavMesh) -> Result<Self, HarnessError> {
        let header = TraceHeader {
            version: TRACE_VERSION,
            config: config.clone(),
            mesh: mesh.clone(),
            subject: None,
            scenario: None,
        };
        Ok(Self {
            session: Session::new(config, mesh)?,
            trace: Trace::new(header),
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn join(&mut self, hello: &Hello, origin: Pose) -> Result<UserId, HarnessError> {
        let tick = self.session.tick_count();
        let id = self.session.join_at(hello, origin)?;
        let hello = Hello {
            user_id: Some(id),
            ..hello.clone()
        };
        self.trace.push(TraceRecord::Join { tick, hello, origin });
        Ok(id)
    }

    pub fn leave(&mut self, user_id: UserId) -> Result<(), HarnessError> {
        let tick = self.session.tick_count();
        self.session.leave(user_id)?;
        self.trace.push(TraceRecord::Leave { tick, user_id });
        Ok(())
    }

    pub fn tick(&mut self, frames: Vec<ClientFrame>) -> TickOutput {
        let tick = self.session.tick_count();
        for f in &frames {
            self.trace.push(TraceRecord::Input {
                tick,
                seq: f.seq,
                frame: f.frame.clone(),
            });
        }
        self.session.tick(frames)
    }

    /// Closes the trace at the current tick.
    pub fn finish(mut self) -> Trace {
        let tick = self.session.tick_count();
        self.trace.push(TraceRecord::End { tick });
        self.trace
    }
}
