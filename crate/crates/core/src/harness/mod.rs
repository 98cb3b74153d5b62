//! Headless scenario runs, trace record/replay and motion metrics.

mod config;
pub mod scenarios;
pub mod trace;

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avatar::UserRig;
use crate::geom::{xz_distance, Pose};
use crate::locomotion::InputSample;
use crate::navmesh::NavMeshError;
use crate::session::{
    AvatarStyle, Hello, InputFrame, MotionStats, Session, SessionConfig, SessionError, SessionEvent, Technique,
    TickOutput, UserId, PROTOCOL_VERSION,
};

pub use config::{ConfigFile, SessionSection};
pub use scenarios::{Scenario, ScenarioName, Script};
pub use trace::{canonical_snapshots, default_mesh, replay_trace, Trace, TraceCursor, TraceHeader, TraceRecord, TraceRecorder};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{what} at ({}, {}, {}) is not on the scenario mesh", .point.x, .point.y, .point.z)]
    ScenarioMeshMismatch { what: String, point: DVec3 },
    #[error("corrupt trace at line {line}: {message}")]
    CorruptTrace { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Mesh(#[from] NavMeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const SUBJECT: UserId = 1;
const OBSERVER: UserId = 2;

/// Technique plus tuning a scenario is run with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueBundle {
    pub technique: Technique,
    pub config: SessionConfig,
    /// Half-range of uniform head tracking noise in the XZ plane, meters.
    #[serde(default)]
    pub head_jitter: f64,
}

impl TechniqueBundle {
    pub fn new(technique: Technique) -> Self {
        Self {
            technique,
            config: SessionConfig::default(),
            head_jitter: 0.0,
        }
    }

    /// Baseline whose avatar snaps to the rig.
    pub fn primitive() -> Self {
        Self::new(Technique {
            avatar: AvatarStyle::Primitive,
            ..Technique::default()
        })
    }
}

impl Default for TechniqueBundle {
    fn default() -> Self {
        Self::new(Technique::default())
    }
}

/// Avatar realignment after one teleport of the subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Realignment {
    /// Session time at which the teleport was applied.
    pub teleport_time: f64,
    /// Avatar to rig distance right after the teleport.
    pub gap: f64,
    /// Time until the avatar was back within the arrival radius.
    pub duration: Option<f64>,
    /// The next teleport or the end of the run came first.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Option<String>,
    pub subject: Option<UserId>,
    pub ticks: u64,
    pub duration: f64,
    /// Continuous viewport translation, meters; teleports excluded.
    pub optical_flow_translation: f64,
    /// Continuous viewport rotation, radians; snap turns excluded.
    pub optical_flow_rotation: f64,
    pub teleport_count: u64,
    pub snap_turn_count: u64,
    pub net_displacement: f64,
    pub discrepancy_max: f64,
    pub discrepancy_mean: f64,
    /// Meter-seconds.
    pub discrepancy_integral: f64,
    /// Durations of completed realignments in teleport order.
    pub realignment_times: Vec<f64>,
    pub realignments: Vec<Realignment>,
    /// Ticks where the subject's avatar jumped faster than its speed cap.
    pub continuity_violations: u64,
}

struct Collector {
    subject: UserId,
    dt: f64,
    arrival_radius: f64,
    base_speed: f64,
    start: DVec3,
    last_rig: DVec3,
    prev_avatar: DVec3,
    stats: MotionStats,
    ticks: u64,
    present: u64,
    d_max: f64,
    d_sum: f64,
    realignments: Vec<Realignment>,
    open: Option<usize>,
    violations: u64,
}

impl Collector {
    fn new(subject: UserId, start: DVec3, cfg: &SessionConfig) -> Self {
        Self {
            subject,
            dt: cfg.dt(),
            arrival_radius: cfg.agent.arrival_radius,
            base_speed: cfg.agent.base_max_speed,
            start,
            last_rig: start,
            prev_avatar: start,
            stats: MotionStats::default(),
            ticks: 0,
            present: 0,
            d_max: 0.0,
            d_sum: 0.0,
            realignments: Vec::new(),
            open: None,
            violations: 0,
        }
    }

    fn observe(&mut self, session: &Session, out: &TickOutput) {
        self.ticks += 1;
        let (Some(user), Some(snap)) = (session.user(self.subject), out.snapshot.user(self.subject)) else {
            return;
        };
        self.present += 1;
        let now = out.snapshot.session_tick as f64 * self.dt;
        let avatar = snap.avatar.pose.position;
        let rig = snap.rig_origin.position;

        let cap = match user.last_output {
            Some(o) if o.teleported => f64::INFINITY,
            Some(o) => o.speed_cap,
            None => self.base_speed,
        };
        if xz_distance(self.prev_avatar, avatar) > cap * self.dt + 1e-9 {
            self.violations += 1;
        }

        for event in &out.events {
            if let SessionEvent::Teleport { user_id, to, .. } = event {
                if *user_id != self.subject {
                    continue;
                }
                if let Some(i) = self.open.take() {
                    self.realignments[i].incomplete = true;
                }
                self.open = Some(self.realignments.len());
                self.realignments.push(Realignment {
                    teleport_time: now - self.dt,
                    gap: xz_distance(self.prev_avatar, *to),
                    duration: None,
                    incomplete: false,
                });
            }
        }

        let d = xz_distance(avatar, rig);
        if let Some(i) = self.open {
            if d <= self.arrival_radius + 1e-9 {
                let r = &mut self.realignments[i];
                r.duration = Some(now - r.teleport_time);
                self.open = None;
            }
        }
        self.d_max = self.d_max.max(d);
        self.d_sum += d;
        self.stats = user.stats;
        self.last_rig = rig;
        self.prev_avatar = avatar;
    }

    fn finish(mut self, scenario: Option<String>) -> MetricsReport {
        if let Some(i) = self.open.take() {
            self.realignments[i].incomplete = true;
        }
        MetricsReport {
            scenario,
            subject: Some(self.subject),
            ticks: self.ticks,
            duration: self.ticks as f64 * self.dt,
            optical_flow_translation: self.stats.continuous_translation,
            optical_flow_rotation: self.stats.continuous_rotation,
            teleport_count: self.stats.teleport_count,
            snap_turn_count: self.stats.snap_turn_count,
            net_displacement: xz_distance(self.start, self.last_rig),
            discrepancy_max: self.d_max,
            discrepancy_mean: if self.present > 0 { self.d_sum / self.present as f64 } else { 0.0 },
            discrepancy_integral: self.d_sum * self.dt,
            realignment_times: self.realignments.iter().filter_map(|r| r.duration).collect(),
            realignments: self.realignments,
            continuity_violations: self.violations,
        }
    }
}

/// Replays a trace and measures its subject.
pub fn run_trace(trace: &Trace) -> Result<(MetricsReport, Vec<TickOutput>), HarnessError> {
    let mut outputs = Vec::new();
    let report = run_trace_with(trace, |out| outputs.push(out.clone()))?;
    Ok((report, outputs))
}

/// Like [`run_trace`] but hands each tick to `sink` instead of keeping it.
pub fn run_trace_with(trace: &Trace, mut sink: impl FnMut(&TickOutput)) -> Result<MetricsReport, HarnessError> {
    let Some(subject) = trace.subject() else {
        trace::replay_with(trace, |_, out| sink(out))?;
        return Ok(MetricsReport {
            scenario: trace.header.scenario.clone(),
            ticks: trace.duration_ticks(),
            duration: trace.duration_ticks() as f64 * trace.header.config.dt(),
            ..MetricsReport::default()
        });
    };
    let start = trace
        .records
        .iter()
        .find_map(|r| match r {
            TraceRecord::Join { hello, origin, .. } if hello.user_id == Some(subject) => Some(origin.position),
            _ => None,
        })
        .map(|p| trace.header.mesh.project_to_mesh(p))
        .unwrap_or(DVec3::ZERO);
    let mut collector = Collector::new(subject, start, &trace.header.config);
    trace::replay_with(trace, |session, out| {
        collector.observe(session, out);
        sink(out);
    })?;
    Ok(collector.finish(trace.header.scenario.clone()))
}

/// Schedules a scenario for one subject and one idle observer.
pub fn scenario_trace(scenario: &Scenario, bundle: &TechniqueBundle, seed: u64) -> Result<Trace, HarnessError> {
    scenario.validate()?;
    let config = bundle.config.clone();
    config.validate()?;
    let rate = config.tick_rate;
    let ticks = (scenario.duration * rate).round() as u64;
    let mut trace = Trace::new(TraceHeader {
        version: trace::TRACE_VERSION,
        config,
        mesh: scenario.mesh.clone(),
        subject: Some(SUBJECT),
        scenario: Some(scenario.label.clone()),
    });
    let hello = |user_id, name: &str| Hello {
        user_id: Some(user_id),
        name: name.into(),
        protocol_version: PROTOCOL_VERSION,
        technique: Some(bundle.technique),
    };
    trace.push(TraceRecord::Join {
        tick: 0,
        hello: hello(SUBJECT, "subject"),
        origin: scenario.user_start,
    });
    trace.push(TraceRecord::Join {
        tick: 0,
        hello: hello(OBSERVER, "observer"),
        origin: Pose::new(scenario.observer_position, scenario.observer_yaw),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = UserRig::default_head(bundle.config.user_height);
    let teleports: Vec<(u64, DVec3)> = match &scenario.script {
        Script::Teleports { schedule } => schedule.iter().map(|s| ((s.t * rate).round() as u64, s.target)).collect(),
        Script::Inputs { .. } => Vec::new(),
    };
    for tick in 0..ticks {
        let t = tick as f64 / rate;
        let mut sample = match &scenario.script {
            Script::Inputs { samples } => samples.get(tick as usize).copied().unwrap_or(InputSample::idle(t)),
            Script::Teleports { .. } => InputSample::idle(t),
        };
        if bundle.head_jitter > 0.0 {
            let j = bundle.head_jitter;
            let offset = DVec2::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j));
            let base = sample.head.unwrap_or(head);
            sample.head = Some(Pose {
                position: base.position + DVec3::new(offset.x, 0.0, offset.y),
                ..base
            });
        }
        let teleport_to = teleports.iter().find(|(at, _)| *at == tick).map(|(_, p)| *p);
        trace.push(TraceRecord::Input {
            tick,
            seq: tick + 1,
            frame: InputFrame {
                user_id: SUBJECT,
                sample,
                teleport_to,
                technique: None,
            },
        });
    }
    trace.push(TraceRecord::End { tick: ticks });
    Ok(trace)
}

/// Runs a scenario headlessly; identical arguments give identical reports.
pub fn run_scenario(scenario: &Scenario, bundle: &TechniqueBundle, seed: u64) -> Result<MetricsReport, HarnessError> {
    run_trace_with(&scenario_trace(scenario, bundle, seed)?, |_| {})
}
