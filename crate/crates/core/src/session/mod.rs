//! Authoritative multi-user session.
//!
//! The session owns every user's rig, locomotion mapper and avatar agent.
//! Each [`Session::tick`] applies at most one input frame per user (the
//! newest), moves rigs, advances avatars and emits a snapshot. Users are
//! processed in ascending id order so identical inputs give identical output.

mod wire;

use std::collections::BTreeMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avatar::{imitation_weight, tick_agent, AgentConfig, AgentError, AgentOutput, AgentState, UserRig, Zone};
use crate::geom::{flatten, normalize_yaw, rotate_yaw, xz_distance, Pose};
use crate::locomotion::{map_input, InputSample, LocomotionConfig, LocomotionError, MapperState, MotionCommand};
use crate::navmesh::NavMesh;
use crate::transitions::{Ghost, TransitionConfig, TransitionState};

pub use wire::*;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is full ({0} users)")]
    SessionFull(usize),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("protocol version {got} is not supported (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
}

impl From<AgentError> for SessionError {
    fn from(e: AgentError) -> Self {
        SessionError::InvalidConfig(e.to_string())
    }
}

impl From<LocomotionError> for SessionError {
    fn from(e: LocomotionError) -> Self {
        SessionError::InvalidConfig(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub tick_rate: f64,
    pub max_users: usize,
    pub user_height: f64,
    /// Where new users appear; projected onto the mesh.
    pub spawn: DVec3,
    pub default_technique: Technique,
    pub agent: AgentConfig,
    pub locomotion: LocomotionConfig,
    pub transition: TransitionConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate: 60.0,
            max_users: 16,
            user_height: 1.75,
            spawn: DVec3::ZERO,
            default_technique: Technique::default(),
            agent: AgentConfig::default(),
            locomotion: LocomotionConfig::default(),
            transition: TransitionConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return Err(SessionError::InvalidConfig(format!("tick_rate must be positive, got {}", self.tick_rate)));
        }
        if self.max_users == 0 {
            return Err(SessionError::InvalidConfig("max_users must be at least 1".into()));
        }
        if !(self.user_height > 0.0) {
            return Err(SessionError::InvalidConfig("user_height must be positive".into()));
        }
        self.agent.validate()?;
        self.locomotion.validate()?;
        self.transition
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }
}

/// Viewport motion a user experienced, split by kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionStats {
    /// Meters of continuous rig translation.
    pub continuous_translation: f64,
    /// Radians of continuous rig rotation.
    pub continuous_rotation: f64,
    pub teleport_count: u64,
    /// Meters covered by teleports.
    pub teleport_distance: f64,
    pub snap_turn_count: u64,
}

#[derive(Debug, Clone)]
pub struct UserSession {
    pub id: UserId,
    pub name: String,
    pub technique: Technique,
    pub rig: UserRig,
    pub mapper: MapperState,
    pub agent: AgentState,
    pub last_sample: InputSample,
    pub last_seq: Option<u64>,
    pub teleport_seq: u64,
    pub stats: MotionStats,
    /// Agent output of the latest tick; `None` for snapped avatars.
    pub last_output: Option<AgentOutput>,
    strafe_weight: f64,
    imitation_weight: f64,
    transition_started: Option<u64>,
}

/// An input frame as received, with its envelope sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientFrame {
    pub seq: u64,
    pub frame: InputFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub snapshot: SessionSnapshot,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone)]
pub struct Session {
    cfg: SessionConfig,
    mesh: NavMesh,
    tick: u64,
    users: BTreeMap<UserId, UserSession>,
    pending_events: Vec<SessionEvent>,
}

impl Session {
    pub fn new(cfg: SessionConfig, mesh: NavMesh) -> Result<Self, SessionError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            mesh,
            tick: 0,
            users: BTreeMap::new(),
            pending_events: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn mesh(&self) -> &NavMesh {
        &self.mesh
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.cfg.dt()
    }

    pub fn user(&self, id: UserId) -> Option<&UserSession> {
        self.users.get(&id)
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.keys().copied()
    }

    /// Admits a user at the configured spawn point.
    pub fn join(&mut self, hello: &Hello) -> Result<UserId, SessionError> {
        let spawn = Pose::at(self.cfg.spawn);
        self.join_at(hello, spawn)
    }

    /// Admits a user whose rig starts at `origin`.
    pub fn join_at(&mut self, hello: &Hello, origin: Pose) -> Result<UserId, SessionError> {
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err(SessionError::VersionMismatch {
                got: hello.protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
        if self.users.len() >= self.cfg.max_users {
            return Err(SessionError::SessionFull(self.cfg.max_users));
        }
        let id = match hello.user_id {
            Some(id) if id != SPECTATOR && !self.users.contains_key(&id) => id,
            _ => (1..).find(|id| !self.users.contains_key(id)).expect("free id"),
        };
        let origin = Pose {
            position: self.mesh.project_to_mesh(origin.position),
            ..origin
        };
        let rig = UserRig::standing(origin, self.cfg.user_height);
        let technique = hello.technique.unwrap_or(self.cfg.default_technique);
        let user = UserSession {
            id,
            name: hello.name.clone(),
            technique,
            agent: AgentState::new(Pose::new(rig.position(), rig.view_yaw())),
            rig,
            mapper: MapperState::default(),
            last_sample: InputSample::idle(0.0),
            last_seq: None,
            teleport_seq: 0,
            stats: MotionStats::default(),
            last_output: None,
            strafe_weight: 0.0,
            imitation_weight: 0.0,
            transition_started: None,
        };
        self.users.insert(id, user);
        self.pending_events.push(SessionEvent::Joined {
            user_id: id,
            name: hello.name.clone(),
        });
        Ok(id)
    }

    pub fn leave(&mut self, id: UserId) -> Result<(), SessionError> {
        self.users.remove(&id).ok_or(SessionError::UnknownUser(id))?;
        self.pending_events.push(SessionEvent::Left { user_id: id });
        Ok(())
    }

    /// Advances the session by one tick.
    pub fn tick(&mut self, frames: Vec<ClientFrame>) -> TickOutput {
        self.tick += 1;
        let dt = self.cfg.dt();
        let mut events = std::mem::take(&mut self.pending_events);

        let mut newest: BTreeMap<UserId, ClientFrame> = BTreeMap::new();
        for incoming in frames {
            let id = incoming.frame.user_id;
            let Some(user) = self.users.get(&id) else {
                events.push(dropped(id, incoming.seq, DropReason::UnknownUser));
                continue;
            };
            let floor = newest.get(&id).map(|f| f.seq).or(user.last_seq);
            if floor.is_some_and(|last| incoming.seq <= last) {
                events.push(dropped(id, incoming.seq, DropReason::SeqRegression));
                continue;
            }
            // Requests in a superseded frame still count.
            let mut incoming = incoming;
            if let Some(prev) = newest.remove(&id) {
                incoming.frame.teleport_to = incoming.frame.teleport_to.or(prev.frame.teleport_to);
                incoming.frame.technique = incoming.frame.technique.or(prev.frame.technique);
            }
            newest.insert(id, incoming);
        }

        let ids: Vec<UserId> = self.users.keys().copied().collect();
        for &id in &ids {
            let frame = newest.remove(&id);
            let user = self.users.get_mut(&id).expect("listed user");
            apply_input(user, frame, &self.mesh, &self.cfg, dt, &mut events);
        }
        for &id in &ids {
            let user = self.users.get_mut(&id).expect("listed user");
            advance_avatar(user, &self.mesh, &self.cfg, dt, self.tick, &mut events);
        }

        TickOutput {
            snapshot: self.snapshot(),
            events,
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_tick: self.tick,
            users: self.users.values().map(user_snapshot).collect(),
        }
    }
}

fn dropped(user_id: UserId, seq: u64, reason: DropReason) -> SessionEvent {
    SessionEvent::Dropped { user_id, seq, reason }
}

fn apply_input(
    user: &mut UserSession,
    frame: Option<ClientFrame>,
    mesh: &NavMesh,
    cfg: &SessionConfig,
    dt: f64,
    events: &mut Vec<SessionEvent>,
) {
    let mut teleport_to = None;
    if let Some(ClientFrame { seq, frame }) = frame {
        user.last_seq = Some(seq);
        user.last_sample = frame.sample;
        teleport_to = frame.teleport_to;
        if let Some(technique) = frame.technique {
            if technique.locomotion != user.technique.locomotion {
                user.mapper = MapperState::default();
            }
            user.technique = technique;
        }
    }
    let sample = user.last_sample;

    // Tracked poses first so mappers see the current head and hands.
    let head = sample.head.unwrap_or_else(|| user.rig.local_head());
    user.rig = UserRig::from_local(
        user.rig.rig_origin,
        &head,
        &sample.left_hand,
        &sample.right_hand,
        user.rig.user_height,
    );

    if let Some(point) = teleport_to {
        let to = mesh.project_to_mesh(point);
        teleport_rig(user, to, events);
    }

    let (commands, mapper) = map_input(user.technique.locomotion, &sample, &user.mapper, &cfg.locomotion, dt, &user.rig);
    user.mapper = mapper;
    for command in commands {
        match command {
            MotionCommand::Continuous {
                delta_position,
                delta_yaw,
            } => {
                let before = user.rig.position();
                let desired = before + flatten(delta_position);
                let moved = place_on_mesh(mesh, desired);
                set_origin(user, Pose { position: moved, ..user.rig.rig_origin });
                user.stats.continuous_translation += xz_distance(before, moved);
                if delta_yaw != 0.0 {
                    rotate_about_head(user, delta_yaw, mesh);
                    user.stats.continuous_rotation += delta_yaw.abs();
                }
            }
            MotionCommand::Teleport { target_offset } => {
                let to = place_on_mesh(mesh, user.rig.position() + flatten(target_offset));
                teleport_rig(user, to, events);
            }
            MotionCommand::SnapTurn { delta_yaw } => {
                rotate_about_head(user, delta_yaw, mesh);
                user.stats.snap_turn_count += 1;
            }
        }
    }
}

/// Keeps the rig on walkable ground; off-mesh targets clamp to the nearest edge.
fn place_on_mesh(mesh: &NavMesh, p: DVec3) -> DVec3 {
    match mesh.locate(p) {
        Some(tri) => DVec3::new(p.x, mesh.height_at(tri, glam::DVec2::new(p.x, p.z)), p.z),
        None => mesh.project_to_mesh(p),
    }
}

fn set_origin(user: &mut UserSession, origin: Pose) {
    user.rig = user.rig.with_origin(origin);
}

fn teleport_rig(user: &mut UserSession, to: DVec3, events: &mut Vec<SessionEvent>) {
    let from = user.rig.position();
    set_origin(user, Pose { position: to, ..user.rig.rig_origin });
    user.teleport_seq += 1;
    user.stats.teleport_count += 1;
    user.stats.teleport_distance += xz_distance(from, to);
    events.push(SessionEvent::Teleport {
        user_id: user.id,
        teleport_seq: user.teleport_seq,
        from,
        to,
    });
}

/// Turns the rig about the tracked head so the viewpoint does not swing.
fn rotate_about_head(user: &mut UserSession, delta_yaw: f64, mesh: &NavMesh) {
    let origin = user.rig.rig_origin;
    let head_local = flatten(user.rig.local_head().position);
    let pivot = origin.position + rotate_yaw(head_local, origin.yaw);
    let yaw = normalize_yaw(origin.yaw + delta_yaw);
    let position = place_on_mesh(mesh, pivot - rotate_yaw(head_local, yaw));
    set_origin(user, Pose { position, yaw, ..origin });
}

fn advance_avatar(
    user: &mut UserSession,
    mesh: &NavMesh,
    cfg: &SessionConfig,
    dt: f64,
    tick: u64,
    events: &mut Vec<SessionEvent>,
) {
    let snap = |user: &mut UserSession| {
        let mut agent = AgentState::new(Pose::new(user.rig.position(), user.rig.view_yaw()));
        agent.fading_ghosts = std::mem::take(&mut user.agent.fading_ghosts);
        user.agent = agent;
        user.strafe_weight = 0.0;
        user.imitation_weight = 0.0;
        user.last_output = None;
    };
    if user.technique.avatar == AvatarStyle::Primitive {
        snap(user);
        return;
    }
    let transition_cfg = TransitionConfig {
        kind: user.technique.transition,
        ..cfg.transition.clone()
    };
    let before = user.agent.active_transition.as_ref().map(|t| (t.kind, t.start_pose.position));
    match tick_agent(&user.agent, &user.rig, mesh, &cfg.agent, &transition_cfg, dt) {
        Ok((agent, output)) => {
            user.agent = agent;
            user.strafe_weight = output.strafe_weight;
            user.imitation_weight = output.imitation_weight;
            user.last_output = Some(output);
        }
        Err(e) => {
            events.push(SessionEvent::AvatarSnapped {
                user_id: user.id,
                reason: e.to_string(),
            });
            snap(user);
        }
    }
    let after = user.agent.active_transition.as_ref().map(|t| t.kind);
    match (before, after) {
        (None, Some(kind)) => {
            let start = user.agent.active_transition.as_ref().expect("active").start_pose.position;
            user.transition_started = Some(tick);
            events.push(SessionEvent::TransitionStarted {
                user_id: user.id,
                kind,
                gap: xz_distance(start, user.rig.position()),
            });
        }
        (Some((kind, _)), None) => {
            let started = user.transition_started.take().unwrap_or(tick);
            events.push(SessionEvent::TransitionCompleted {
                user_id: user.id,
                kind,
                duration: (tick - started + 1) as f64 * dt,
            });
        }
        _ => {}
    }
}

fn ghost_view(ghost: &Ghost) -> GhostView {
    GhostView {
        pose: ghost.pose,
        alpha: ghost.alpha,
    }
}

fn transition_snapshot(t: &TransitionState) -> TransitionSnapshot {
    TransitionSnapshot {
        kind: t.kind,
        elapsed: t.elapsed,
        ghosts: t.ghosts.iter().map(ghost_view).collect(),
        dissolve_in_alpha: t.dissolve_in_alpha,
        dissolve_out_alpha: t.dissolve_out_alpha,
        stream: t.stream.map(|(a, b)| [a, b]),
        user_ghost: t.user_ghost,
        trail_pose: t.trail.as_ref().map(|w| w.pose),
        visible_to_self: t.visible_to_self,
    }
}

fn user_snapshot(user: &UserSession) -> UserSnapshot {
    let agent = &user.agent;
    UserSnapshot {
        user_id: user.id,
        name: user.name.clone(),
        technique: user.technique,
        rig_origin: user.rig.rig_origin,
        head: user.rig.head,
        left_hand: user.rig.left_hand,
        right_hand: user.rig.right_hand,
        avatar: AvatarSnapshot {
            pose: agent.avatar_pose,
            zone: agent.zone,
            strafe_weight: user.strafe_weight,
            imitation_weight: user.imitation_weight,
            fading_ghosts: agent.fading_ghosts.iter().map(ghost_view).collect(),
        },
        transition: agent.active_transition.as_ref().map(transition_snapshot),
        last_teleport_seq: user.teleport_seq,
    }
}

/// Zone and blend weights an observer would derive for a user.
pub fn describe_gap(avatar: &Pose, rig: &UserRig, cfg: &AgentConfig) -> (f64, Zone, f64) {
    let d = xz_distance(avatar.position, rig.position());
    (d, crate::avatar::zone_of(d, cfg), imitation_weight(d, cfg))
}
