//! Long-distance travel visualizations that realign an avatar with its user
//! after a teleport.
//!
//! Every transition is a deterministic timeline. Rendering is left to
//! clients: this module only produces poses, ghost alphas, dissolve alphas
//! and stream endpoints.

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avatar::{AgentConfig, UserRig};
use crate::geom::{xz_distance, yaw_of, Pose};
use crate::navmesh::{NavMesh, NavMeshError, Path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// The avatar walks to its user at its normal top speed.
    #[default]
    Walking,
    /// Faster dash that leaves fading afterimages behind.
    Afterimage,
    /// Fades out at the old spot while fading in next to the user.
    Dissolve,
    /// A runner at normal speed chases a fast invisible scout whose ghosts
    /// vanish as the runner passes through them.
    Foresight,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 4] = [
        TransitionKind::Walking,
        TransitionKind::Afterimage,
        TransitionKind::Dissolve,
        TransitionKind::Foresight,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionConfig {
    pub kind: TransitionKind,
    /// Speed multiplier of the fast layer (afterimage dash, foresight scout).
    pub speed_factor: f64,
    /// Meters traveled between spawned ghosts.
    pub ghost_spacing: f64,
    /// Seconds for a timed ghost to fade out.
    pub ghost_fade: f64,
    pub dissolve_duration: f64,
    /// Whether the moving user's own client should render the transition.
    pub visible_to_self: bool,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            kind: TransitionKind::Walking,
            speed_factor: 10.0,
            ghost_spacing: 0.75,
            ghost_fade: 1.0,
            dissolve_duration: 0.8,
            visible_to_self: false,
        }
    }
}

impl TransitionConfig {
    pub fn with_kind(kind: TransitionKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TransitionError> {
        if !(self.speed_factor >= 1.0) {
            return Err(TransitionError::InvalidConfig("speed_factor must be at least 1"));
        }
        if !(self.ghost_spacing > 0.0) {
            return Err(TransitionError::InvalidConfig("ghost_spacing must be positive"));
        }
        if !(self.ghost_fade > 0.0 && self.dissolve_duration > 0.0) {
            return Err(TransitionError::InvalidConfig("durations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error("avatar is only {distance:.3} m from its user; threshold is {threshold} m")]
    BelowThreshold { distance: f64, threshold: f64 },
    #[error(transparent)]
    NoPath(#[from] NavMeshError),
    #[error("invalid transition config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GhostExpiry {
    /// Fades linearly to zero over `fade` seconds.
    Timed { fade: f64 },
    /// Visible until the runner comes within half a ghost spacing of it.
    OnPassThrough { spawn_distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ghost {
    pub pose: Pose,
    /// Transition time at which the ghost appeared.
    pub spawn_time: f64,
    pub age: f64,
    pub alpha: f64,
    pub expiry: GhostExpiry,
}

impl Ghost {
    fn timed(pose: Pose, spawn_time: f64, fade: f64) -> Self {
        Self {
            pose,
            spawn_time,
            age: 0.0,
            alpha: 1.0,
            expiry: GhostExpiry::Timed { fade },
        }
    }

    pub fn expired(&self) -> bool {
        self.alpha <= 0.0
    }

    /// Ages a timed ghost; pass-through ghosts are driven by the runner.
    pub fn age_by(&mut self, dt: f64) {
        self.age += dt;
        if let GhostExpiry::Timed { fade } = self.expiry {
            self.alpha = if self.age >= fade { 0.0 } else { (1.0 - self.age / fade).clamp(0.0, 1.0) };
        }
    }
}

/// An agent layer that walks a path toward the live target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub pose: Pose,
    pub path: Path,
    /// Arc length covered on `path`.
    pub progress: f64,
    /// Total distance covered since the transition started, across re-paths.
    pub traveled: f64,
    pub speed: f64,
    pub arrived_at: Option<f64>,
}

impl Walker {
    fn new(pose: Pose, target: DVec3, speed: f64, mesh: &NavMesh) -> Result<Self, NavMeshError> {
        Ok(Self {
            pose,
            path: mesh.find_path(pose.position, target)?,
            progress: 0.0,
            traveled: 0.0,
            speed,
            arrived_at: None,
        })
    }

    fn retarget(&mut self, target: DVec3, mesh: &NavMesh) -> Result<(), NavMeshError> {
        self.path = mesh.find_path(self.pose.position, target)?;
        self.progress = 0.0;
        self.arrived_at = None;
        Ok(())
    }

    fn at_end(&self) -> bool {
        self.progress >= self.path.total_length
    }

    /// Moves up to `speed * dt` along the path; returns the distance covered.
    fn advance(&mut self, dt: f64) -> f64 {
        let step = (self.speed * dt).min(self.path.total_length - self.progress).max(0.0);
        if step > 0.0 {
            let direction = self.path.direction_at(self.progress);
            self.progress += step;
            if self.path.total_length - self.progress <= 1e-12 {
                self.progress = self.path.total_length;
            }
            self.traveled += step;
            self.pose.position = self.path.position_at(self.progress);
            self.pose.yaw = yaw_of(direction);
        }
        step
    }

    /// Poses at every multiple of `spacing` crossed by the last `step` meters.
    fn marks_crossed(&self, step: f64, spacing: f64) -> Vec<(f64, Pose)> {
        let before = self.traveled - step;
        let mut marks = Vec::new();
        let mut k = (before / spacing).floor() + 1.0;
        while k * spacing <= self.traveled + 1e-12 {
            let mark = k * spacing;
            let back = self.traveled - mark;
            let arc = (self.progress - back).max(0.0);
            let pose = Pose::new(self.path.position_at(arc), self.pose.yaw);
            marks.push((mark, pose));
            k += 1.0;
        }
        marks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionState {
    pub kind: TransitionKind,
    pub start_pose: Pose,
    /// User position the avatar is realigning with; follows later moves.
    pub target: DVec3,
    /// The solid avatar.
    pub primary_pose: Pose,
    pub ghosts: Vec<Ghost>,
    pub dissolve_in_alpha: f64,
    pub dissolve_out_alpha: f64,
    pub stream: Option<(DVec3, DVec3)>,
    pub elapsed: f64,
    pub complete: bool,
    /// Path-following primary for walking, afterimage and foresight.
    pub runner: Option<Walker>,
    /// Invisible fast layer of a foresight transition.
    pub trail: Option<Walker>,
    /// Foresight ghost that sits on the user.
    pub user_ghost: Option<Pose>,
    pub visible_to_self: bool,
}

impl TransitionState {
    /// Speed limit that applies to the primary avatar.
    pub fn speed_cap(&self, agent: &AgentConfig, cfg: &TransitionConfig) -> f64 {
        match self.kind {
            TransitionKind::Afterimage => agent.base_max_speed * cfg.speed_factor,
            TransitionKind::Dissolve => f64::INFINITY,
            TransitionKind::Walking | TransitionKind::Foresight => agent.base_max_speed,
        }
    }

    /// Number of simultaneously simulated avatar layers.
    pub fn layer_count(&self) -> usize {
        1 + usize::from(self.trail.is_some()) + usize::from(self.user_ghost.is_some())
    }
}

fn user_pose(rig: &UserRig) -> Pose {
    Pose::new(rig.position(), rig.view_yaw())
}

/// Begins a transition from `avatar_pose` toward the user's rig.
pub fn start_transition(
    avatar_pose: Pose,
    rig: &UserRig,
    mesh: &NavMesh,
    agent: &AgentConfig,
    cfg: &TransitionConfig,
) -> Result<TransitionState, TransitionError> {
    let target = mesh.project_to_mesh(rig.position());
    let distance = xz_distance(avatar_pose.position, target);
    if distance <= agent.long_distance_threshold {
        return Err(TransitionError::BelowThreshold {
            distance,
            threshold: agent.long_distance_threshold,
        });
    }
    let mut state = TransitionState {
        kind: cfg.kind,
        start_pose: avatar_pose,
        target,
        primary_pose: avatar_pose,
        ghosts: Vec::new(),
        dissolve_in_alpha: 0.0,
        dissolve_out_alpha: 1.0,
        stream: None,
        elapsed: 0.0,
        complete: false,
        runner: None,
        trail: None,
        user_ghost: None,
        visible_to_self: cfg.visible_to_self,
    };
    match cfg.kind {
        TransitionKind::Walking => {
            state.runner = Some(Walker::new(avatar_pose, target, agent.base_max_speed, mesh)?);
        }
        TransitionKind::Afterimage => {
            let speed = agent.base_max_speed * cfg.speed_factor;
            state.runner = Some(Walker::new(avatar_pose, target, speed, mesh)?);
        }
        TransitionKind::Dissolve => {
            state.primary_pose = Pose::new(target, rig.view_yaw());
            state.ghosts.push(Ghost::timed(avatar_pose, 0.0, cfg.dissolve_duration));
            state.stream = Some((avatar_pose.position, target));
        }
        TransitionKind::Foresight => {
            state.runner = Some(Walker::new(avatar_pose, target, agent.base_max_speed, mesh)?);
            let speed = agent.base_max_speed * cfg.speed_factor;
            state.trail = Some(Walker::new(avatar_pose, target, speed, mesh)?);
            state.user_ghost = Some(user_pose(rig));
        }
    }
    Ok(state)
}

/// Advances a transition by `dt` seconds against the current rig.
pub fn tick_transition(
    state: &TransitionState,
    rig: &UserRig,
    mesh: &NavMesh,
    agent: &AgentConfig,
    cfg: &TransitionConfig,
    dt: f64,
) -> Result<TransitionState, TransitionError> {
    let mut next = state.clone();
    if next.complete {
        return Ok(next);
    }
    next.elapsed += dt;
    let target = mesh.project_to_mesh(rig.position());
    let moved = xz_distance(target, state.target) > agent.arrival_radius;
    next.target = target;

    match next.kind {
        TransitionKind::Walking => {
            let runner = next.runner.as_mut().expect("walking transition has a runner");
            if moved {
                runner.retarget(target, mesh)?;
            }
            runner.advance(dt);
            next.primary_pose = runner.pose;
        }
        TransitionKind::Afterimage => {
            for ghost in &mut next.ghosts {
                ghost.age_by(dt);
            }
            let runner = next.runner.as_mut().expect("afterimage transition has a runner");
            if moved {
                runner.retarget(target, mesh)?;
            }
            let step = runner.advance(dt);
            for (_, pose) in runner.marks_crossed(step, cfg.ghost_spacing) {
                next.ghosts.push(Ghost::timed(pose, next.elapsed, cfg.ghost_fade));
            }
            next.primary_pose = runner.pose;
        }
        TransitionKind::Dissolve => {
            next.dissolve_in_alpha = (next.elapsed / cfg.dissolve_duration).min(1.0);
            if cfg.dissolve_duration - next.elapsed <= 1e-9 {
                next.dissolve_in_alpha = 1.0;
            }
            next.dissolve_out_alpha = 1.0 - next.dissolve_in_alpha;
            next.primary_pose = Pose::new(target, rig.view_yaw());
            let copy = next.ghosts.first_mut().expect("dissolve keeps its copy");
            copy.age += dt;
            copy.alpha = next.dissolve_out_alpha;
            next.stream = Some((copy.pose.position, target));
            if next.dissolve_in_alpha >= 1.0 {
                next.complete = true;
            }
        }
        TransitionKind::Foresight => {
            next.user_ghost = Some(user_pose(rig));
            let trail = next.trail.as_mut().expect("foresight transition has a trail");
            if moved {
                trail.retarget(target, mesh)?;
            }
            let step = trail.advance(dt);
            for (_, pose) in trail.marks_crossed(step, cfg.ghost_spacing) {
                next.ghosts.push(Ghost {
                    pose,
                    spawn_time: next.elapsed,
                    age: 0.0,
                    alpha: 1.0,
                    expiry: GhostExpiry::OnPassThrough { spawn_distance: 0.0 },
                });
            }
            if trail.at_end() && trail.arrived_at.is_none() {
                trail.arrived_at = Some(next.elapsed);
            }

            let runner = next.runner.as_mut().expect("foresight transition has a runner");
            if moved {
                runner.retarget(target, mesh)?;
            }
            runner.advance(dt);
            next.primary_pose = runner.pose;
            let pass_radius = cfg.ghost_spacing / 2.0;
            for ghost in &mut next.ghosts {
                ghost.age += dt;
                if ghost.alpha <= 0.0 {
                    continue;
                }
                let d = xz_distance(ghost.pose.position, runner.pose.position);
                if let GhostExpiry::OnPassThrough { spawn_distance } = &mut ghost.expiry {
                    if *spawn_distance == 0.0 {
                        *spawn_distance = d.max(f64::MIN_POSITIVE);
                    }
                    ghost.alpha = if d <= pass_radius { 0.0 } else { (d / *spawn_distance).min(1.0) };
                }
            }
        }
    }

    if let Some(runner) = next.runner.as_mut() {
        if runner.at_end() && xz_distance(runner.pose.position, target) <= agent.arrival_radius {
            runner.arrived_at.get_or_insert(next.elapsed);
            next.complete = true;
            if next.kind == TransitionKind::Foresight {
                for ghost in &mut next.ghosts {
                    ghost.alpha = 0.0;
                }
            }
        }
    }
    Ok(next)
}
