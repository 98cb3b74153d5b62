//! Planar helpers and the [`Pose`] type shared by every module.

use std::f64::consts::{PI, TAU};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

/// Position plus orientation. Only heads and hands use pitch and roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: DVec3,
    /// Radians about +Y, normalized to (-pi, pi].
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::new(DVec3::ZERO, 0.0)
    }
}

impl Pose {
    pub fn new(position: DVec3, yaw: f64) -> Self {
        Self {
            position,
            yaw: normalize_yaw(yaw),
            pitch: 0.0,
            roll: 0.0,
        }
    }

    pub fn at(position: DVec3) -> Self {
        Self::new(position, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }

    /// Expresses a pose given in this frame in world space.
    pub fn compose(&self, local: &Pose) -> Pose {
        Pose {
            position: self.position + rotate_yaw(local.position, self.yaw),
            yaw: normalize_yaw(self.yaw + local.yaw),
            pitch: local.pitch,
            roll: local.roll,
        }
    }

    /// Inverse of [`Pose::compose`]: expresses a world pose in this frame.
    pub fn localize(&self, world: &Pose) -> Pose {
        Pose {
            position: rotate_yaw(world.position - self.position, -self.yaw),
            yaw: normalize_yaw(world.yaw - self.yaw),
            pitch: world.pitch,
            roll: world.roll,
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_yaw(yaw: f64) -> f64 {
    if yaw > -PI && yaw <= PI {
        return yaw;
    }
    let wrapped = (yaw + PI).rem_euclid(TAU) - PI;
    if wrapped <= -PI {
        wrapped + TAU
    } else {
        wrapped
    }
}

/// Signed shortest rotation from `from` to `to`.
pub fn yaw_delta(from: f64, to: f64) -> f64 {
    normalize_yaw(to - from)
}

/// Interpolates along the shorter arc; the yaw-only case of a quaternion slerp.
pub fn slerp_yaw(from: f64, to: f64, t: f64) -> f64 {
    normalize_yaw(from + yaw_delta(from, to) * t)
}

/// Turns `from` toward `to` by at most `max_step` radians.
pub fn step_yaw(from: f64, to: f64, max_step: f64) -> f64 {
    let delta = yaw_delta(from, to);
    if delta.abs() <= max_step {
        normalize_yaw(to)
    } else {
        normalize_yaw(from + max_step.copysign(delta))
    }
}

/// Unit forward vector for a yaw (yaw 0 faces +Z, positive yaw turns toward +X).
pub fn forward(yaw: f64) -> DVec3 {
    DVec3::new(yaw.sin(), 0.0, yaw.cos())
}

/// Yaw of a planar direction; zero for the zero vector.
pub fn yaw_of(direction: DVec3) -> f64 {
    if direction.x == 0.0 && direction.z == 0.0 {
        0.0
    } else {
        direction.x.atan2(direction.z)
    }
}

/// Rotates a vector about +Y by `yaw` (local to world).
pub fn rotate_yaw(v: DVec3, yaw: f64) -> DVec3 {
    let (s, c) = yaw.sin_cos();
    DVec3::new(v.x * c + v.z * s, v.y, -v.x * s + v.z * c)
}

pub fn xz(v: DVec3) -> DVec2 {
    DVec2::new(v.x, v.z)
}

pub fn flatten(v: DVec3) -> DVec3 {
    DVec3::new(v.x, 0.0, v.z)
}

pub fn xz_distance(a: DVec3, b: DVec3) -> f64 {
    xz(a).distance(xz(b))
}

/// Twice the signed area of the planar triangle `abc`; positive when `c` lies
/// counter-clockwise of `a -> b` in (x, z) axes.
pub fn cross2(a: DVec2, b: DVec2, c: DVec2) -> f64 {
    (b - a).perp_dot(c - a)
}

pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
