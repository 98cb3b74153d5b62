//! The Smart Avatar agent: follows its user over the navmesh, locks its yaw
//! to the user's view when close, blends in imitation when overlapping, and
//! hands off to a [`transitions`](crate::transitions) timeline when the user
//! teleports out of range.

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{normalize_yaw, slerp_yaw, smoothstep, step_yaw, xz, xz_distance, yaw_delta, yaw_of, Pose};
use crate::navmesh::{NavMesh, NavMeshError, Path};
use crate::transitions::{self, Ghost, TransitionConfig, TransitionError, TransitionState};

/// Time constant of the exponential position easing inside the imitation zone.
pub const IMITATION_EASE_TAU: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Follow,
    Strafe,
    Imitate,
    LongDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub strafing_radius: f64,
    pub imitation_radius: f64,
    pub long_distance_threshold: f64,
    pub base_max_speed: f64,
    pub max_angular_speed: f64,
    pub yaw_blend_duration: f64,
    pub arrival_radius: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            strafing_radius: 2.0,
            imitation_radius: 0.5,
            long_distance_threshold: 6.0,
            base_max_speed: 3.5,
            max_angular_speed: std::f64::consts::PI,
            yaw_blend_duration: 0.5,
            arrival_radius: 0.05,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let ordered = 0.0 < self.imitation_radius
            && self.imitation_radius < self.strafing_radius
            && self.strafing_radius < self.long_distance_threshold;
        if !ordered {
            return Err(AgentError::InvalidConfig(
                "expected 0 < imitation_radius < strafing_radius < long_distance_threshold",
            ));
        }
        if !(self.base_max_speed > 0.0 && self.max_angular_speed > 0.0) {
            return Err(AgentError::InvalidConfig("speeds must be positive"));
        }
        if !(self.yaw_blend_duration > 0.0 && self.arrival_radius > 0.0) {
            return Err(AgentError::InvalidConfig("yaw_blend_duration and arrival_radius must be positive"));
        }
        Ok(())
    }
}

/// Tracked user state in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRig {
    pub rig_origin: Pose,
    pub head: Pose,
    pub left_hand: Pose,
    pub right_hand: Pose,
    pub user_height: f64,
}

impl UserRig {
    /// Rig-local head pose of a user standing at the origin and looking ahead.
    pub fn default_head(user_height: f64) -> Pose {
        Pose::at(DVec3::new(0.0, user_height - 0.1, 0.0))
    }

    pub fn default_hand(user_height: f64, side: f64) -> Pose {
        Pose::at(DVec3::new(0.25 * side, user_height * 0.55, 0.3))
    }

    /// A rig whose user stands still in the middle of the play area.
    pub fn standing(origin: Pose, user_height: f64) -> Self {
        Self::from_local(
            origin,
            &Self::default_head(user_height),
            &Self::default_hand(user_height, -1.0),
            &Self::default_hand(user_height, 1.0),
            user_height,
        )
    }

    pub fn from_local(origin: Pose, head: &Pose, left_hand: &Pose, right_hand: &Pose, user_height: f64) -> Self {
        Self {
            rig_origin: origin,
            head: origin.compose(head),
            left_hand: origin.compose(left_hand),
            right_hand: origin.compose(right_hand),
            user_height,
        }
    }

    pub fn position(&self) -> DVec3 {
        self.rig_origin.position
    }

    /// World yaw of the user's viewing direction.
    pub fn view_yaw(&self) -> f64 {
        self.head.yaw
    }

    pub fn local_head(&self) -> Pose {
        self.rig_origin.localize(&self.head)
    }

    pub fn local_left_hand(&self) -> Pose {
        self.rig_origin.localize(&self.left_hand)
    }

    pub fn local_right_hand(&self) -> Pose {
        self.rig_origin.localize(&self.right_hand)
    }

    /// Rebuilds world poses after the origin moved, keeping local poses.
    pub fn with_origin(&self, origin: Pose) -> Self {
        Self::from_local(
            origin,
            &self.local_head(),
            &self.local_left_hand(),
            &self.local_right_hand(),
            self.user_height,
        )
    }

    pub fn head_height_valid(&self) -> bool {
        let h = self.head.position.y - self.rig_origin.position.y;
        h > 0.0 && h <= self.user_height + 0.3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub avatar_pose: Pose,
    pub zone: Zone,
    /// Progress of the yaw lock toward the user's view, in [0, 1].
    pub yaw_blend: f64,
    /// Direction of travel, before yaw locking.
    pub heading: f64,
    pub current_path: Option<Path>,
    pub path_progress: f64,
    pub active_transition: Option<TransitionState>,
    /// Ghosts left behind by a finished transition, still fading out.
    pub fading_ghosts: Vec<Ghost>,
}

impl AgentState {
    pub fn new(avatar_pose: Pose) -> Self {
        Self {
            avatar_pose,
            zone: Zone::Follow,
            yaw_blend: 0.0,
            heading: avatar_pose.yaw,
            current_path: None,
            path_progress: 0.0,
            active_transition: None,
            fading_ghosts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub new_pose: Pose,
    /// Planar velocity in (x, z), m/s.
    pub desired_lateral_velocity: DVec2,
    pub desired_angular_velocity: f64,
    pub strafe_weight: f64,
    pub imitation_weight: f64,
    /// Speed limit that applied this tick.
    pub speed_cap: f64,
    /// Set when the avatar jumped instead of moving (dissolve).
    pub teleported: bool,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no walkable surface under the user at ({}, {}, {})", .0.x, .0.y, .0.z)]
    OffMeshTarget(DVec3),
    #[error("timestep must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error(transparent)]
    Path(#[from] NavMeshError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(&'static str),
}

/// Classifies an avatar-to-user distance. Boundaries belong to the inner zone.
pub fn zone_of(distance: f64, cfg: &AgentConfig) -> Zone {
    if distance > cfg.long_distance_threshold {
        Zone::LongDistance
    } else if distance <= cfg.imitation_radius {
        Zone::Imitate
    } else if distance <= cfg.strafing_radius {
        Zone::Strafe
    } else {
        Zone::Follow
    }
}

/// Head/hand imitation blend: 1 on top of the user, 0 at the zone edge.
pub fn imitation_weight(distance: f64, cfg: &AgentConfig) -> f64 {
    (1.0 - distance / cfg.imitation_radius).clamp(0.0, 1.0)
}

/// Advances the avatar by one tick against the latest rig.
pub fn tick_agent(
    state: &AgentState,
    rig: &UserRig,
    mesh: &NavMesh,
    cfg: &AgentConfig,
    transition_cfg: &TransitionConfig,
    dt: f64,
) -> Result<(AgentState, AgentOutput), AgentError> {
    if !(dt > 0.0) {
        return Err(AgentError::InvalidTimestep(dt));
    }
    let target = rig.position();
    if mesh.locate(target).is_none() {
        return Err(AgentError::OffMeshTarget(target));
    }

    let mut next = state.clone();
    for ghost in &mut next.fading_ghosts {
        ghost.age_by(dt);
    }
    next.fading_ghosts.retain(|g| !g.expired());

    let before = state.avatar_pose;
    let mut teleported = false;
    let speed_cap;

    let distance = xz_distance(before.position, target);
    if state.active_transition.is_none() && zone_of(distance, cfg) == Zone::LongDistance {
        let started = transitions::start_transition(before, rig, mesh, cfg, transition_cfg)?;
        teleported = started.primary_pose.position != before.position;
        next.active_transition = Some(started);
        next.current_path = None;
        next.path_progress = 0.0;
    }

    if let Some(active) = next.active_transition.take() {
        let ticked = transitions::tick_transition(&active, rig, mesh, cfg, transition_cfg, dt)?;
        speed_cap = ticked.speed_cap(cfg, transition_cfg);
        if active.kind == transitions::TransitionKind::Dissolve {
            teleported |= xz_distance(ticked.primary_pose.position, active.primary_pose.position) > 0.0;
        }
        next.avatar_pose = ticked.primary_pose;
        next.heading = ticked.primary_pose.yaw;
        next.yaw_blend = 0.0;
        if ticked.complete {
            next.fading_ghosts
                .extend(ticked.ghosts.iter().filter(|g| !g.expired() && matches!(g.expiry, transitions::GhostExpiry::Timed { .. })));
            let after = xz_distance(next.avatar_pose.position, target);
            next.zone = match zone_of(after, cfg) {
                Zone::LongDistance => Zone::Follow,
                z => z,
            };
        } else {
            next.zone = Zone::LongDistance;
            next.active_transition = Some(ticked);
        }
    } else {
        speed_cap = cfg.base_max_speed;
        follow(&mut next, rig, mesh, cfg, dt, zone_of(distance, cfg))?;
    }

    let after = next.avatar_pose;
    debug_assert!(mesh.locate(after.position).is_some(), "avatar left the mesh");
    let velocity = if teleported {
        DVec2::ZERO
    } else {
        (xz(after.position) - xz(before.position)) / dt
    };
    let separation = xz_distance(after.position, target);
    let output = AgentOutput {
        new_pose: after,
        desired_lateral_velocity: velocity,
        desired_angular_velocity: if teleported { 0.0 } else { yaw_delta(before.yaw, after.yaw) / dt },
        strafe_weight: next.yaw_blend,
        imitation_weight: if next.active_transition.is_some() { 0.0 } else { imitation_weight(separation, cfg) },
        speed_cap,
        teleported,
    };
    Ok((next, output))
}

/// Follow, strafe and imitate movement along a path to the user.
fn follow(next: &mut AgentState, rig: &UserRig, mesh: &NavMesh, cfg: &AgentConfig, dt: f64, zone: Zone) -> Result<(), AgentError> {
    let target = rig.position();
    let stale = next
        .current_path
        .as_ref()
        .is_none_or(|p| xz_distance(p.goal(), target) > cfg.arrival_radius);
    if stale {
        next.current_path = Some(mesh.find_path(next.avatar_pose.position, target)?);
        next.path_progress = 0.0;
    }
    let path = next.current_path.as_ref().expect("path set above");
    let remaining = (path.total_length - next.path_progress).max(0.0);
    let cap = cfg.base_max_speed * dt;
    let step = match zone {
        Zone::Imitate => (remaining * (1.0 - (-dt / IMITATION_EASE_TAU).exp())).min(cap),
        _ => remaining.min(cap),
    };
    if step > 0.0 {
        let direction = path.direction_at(next.path_progress);
        next.path_progress = (next.path_progress + step).min(path.total_length);
        next.avatar_pose.position = path.position_at(next.path_progress);
        if direction != DVec3::ZERO {
            next.heading = step_yaw(next.heading, yaw_of(direction), cfg.max_angular_speed * dt);
        }
    }

    let blend_rate = dt / cfg.yaw_blend_duration;
    next.yaw_blend = match zone {
        Zone::Follow | Zone::LongDistance => (next.yaw_blend - blend_rate).max(0.0),
        Zone::Strafe | Zone::Imitate => (next.yaw_blend + blend_rate).min(1.0),
    };
    if next.yaw_blend > 1.0 - 1e-9 {
        next.yaw_blend = 1.0;
    } else if next.yaw_blend < 1e-9 {
        next.yaw_blend = 0.0;
    }
    next.avatar_pose.yaw = normalize_yaw(slerp_yaw(next.heading, rig.view_yaw(), smoothstep(next.yaw_blend)));

    let separation = xz_distance(next.avatar_pose.position, target);
    next.zone = match zone_of(separation, cfg) {
        Zone::LongDistance => Zone::Follow,
        z => z,
    };
    Ok(())
}
