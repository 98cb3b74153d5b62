//! Scripted scenarios reproducing the study geometries.

use std::f64::consts::{PI, TAU};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geom::{forward, Pose};
use crate::locomotion::InputSample;
use crate::navmesh::NavMesh;

/// Half-width of the lemniscate along X.
pub const FIGURE_EIGHT_HALF_LENGTH: f64 = 25.0;
pub const FIGURE_EIGHT_HEIGHT: f64 = 10.0;
pub const FIGURE_EIGHT_POINTS: usize = 11;
pub const FIGURE_EIGHT_INTERVAL: f64 = 4.0;
/// Observer distance from the figure's center.
pub const OBSERVER_DISTANCE: f64 = 10.0;
pub const FRUIT_DISTANCE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    FigureEight,
    FruitCourse,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTeleport {
    pub t: f64,
    pub target: DVec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Script {
    /// One sample per tick starting at tick 0.
    Inputs { samples: Vec<InputSample> },
    Teleports { schedule: Vec<ScheduledTeleport> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    /// Free-form label; distinguishes custom scenarios.
    pub label: String,
    pub mesh: NavMesh,
    pub user_start: Pose,
    pub script: Script,
    /// Seconds simulated.
    pub duration: f64,
    pub observer_position: DVec3,
    pub observer_yaw: f64,
}

impl Scenario {
    /// Every scripted position must lie on the mesh.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let check = |what: &str, p: DVec3| {
            if self.mesh.locate(p).is_none() {
                Err(HarnessError::ScenarioMeshMismatch {
                    what: what.to_string(),
                    point: p,
                })
            } else {
                Ok(())
            }
        };
        check("user start", self.user_start.position)?;
        check("observer", self.observer_position)?;
        if let Script::Teleports { schedule } = &self.script {
            for (i, s) in schedule.iter().enumerate() {
                check(&format!("teleport target {i}"), s.target)?;
            }
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(HarnessError::Config(format!("scenario duration {} is invalid", self.duration)));
        }
        Ok(())
    }

    pub fn teleport_targets(&self) -> Vec<DVec3> {
        match &self.script {
            Script::Teleports { schedule } => schedule.iter().map(|s| s.target).collect(),
            Script::Inputs { .. } => Vec::new(),
        }
    }
}

/// Point on the figure-eight path at parameter `t` in [0, 2pi).
///
/// Bernoulli lemniscate with half-length `FIGURE_EIGHT_HALF_LENGTH`, its
/// Z axis scaled so the curve is `FIGURE_EIGHT_HEIGHT` tall.
pub fn lemniscate(t: f64) -> DVec3 {
    let a = FIGURE_EIGHT_HALF_LENGTH;
    let (s, c) = t.sin_cos();
    let denom = 1.0 + s * s;
    // Unscaled half-height is a / (2 sqrt 2), reached at sin^2 t = 1/3.
    let z_scale = (FIGURE_EIGHT_HEIGHT / 2.0) / (a / (2.0 * 2f64.sqrt()));
    DVec3::new(a * c / denom, 0.0, a * s * c / denom * z_scale)
}

/// Eleven teleports along the figure eight, one every 4 s from t = 0. The
/// user starts at the figure's center; an observer stands 10 m from the
/// center looking across the figure's long axis.
pub fn generate_figure_eight() -> Scenario {
    let intervals = (FIGURE_EIGHT_POINTS - 1) as f64;
    let schedule = (0..FIGURE_EIGHT_POINTS)
        .map(|k| ScheduledTeleport {
            t: k as f64 * FIGURE_EIGHT_INTERVAL,
            target: lemniscate(TAU * k as f64 / intervals),
        })
        .collect::<Vec<_>>();
    let mesh = NavMesh::rectangle(DVec2::new(-35.0, -15.0), DVec2::new(35.0, 15.0), 14, 6).expect("valid rectangle");
    Scenario {
        name: ScenarioName::FigureEight,
        label: "figure_eight".into(),
        mesh,
        user_start: Pose::at(DVec3::ZERO),
        // Extra time lets the last realignment finish.
        duration: intervals * FIGURE_EIGHT_INTERVAL + FIGURE_EIGHT_INTERVAL,
        script: Script::Teleports { schedule },
        observer_position: DVec3::new(0.0, 0.0, -OBSERVER_DISTANCE),
        observer_yaw: 0.0,
    }
}

/// Start point and three fruit sets 5 m away: straight ahead, then left,
/// then behind, followed by the walk back to the start. The user visits
/// each stop by teleporting every 5 s.
pub fn generate_fruit_course() -> Scenario {
    let start = DVec3::ZERO;
    let stops = fruit_bearings()
        .iter()
        .map(|&bearing| start + forward(bearing) * FRUIT_DISTANCE)
        .chain(std::iter::once(start))
        .collect::<Vec<_>>();
    let schedule = stops
        .iter()
        .enumerate()
        .map(|(i, &target)| ScheduledTeleport {
            t: 5.0 * (i + 1) as f64,
            target,
        })
        .collect::<Vec<_>>();
    let mesh = NavMesh::rectangle(DVec2::splat(-10.0), DVec2::splat(10.0), 4, 4).expect("valid rectangle");
    Scenario {
        name: ScenarioName::FruitCourse,
        label: "fruit_course".into(),
        mesh,
        user_start: Pose::at(start),
        duration: 5.0 * (schedule.len() + 1) as f64,
        script: Script::Teleports { schedule },
        observer_position: DVec3::new(0.0, 0.0, -8.0),
        observer_yaw: 0.0,
    }
}

/// Absolute bearings of the fruit sets as seen from the start: ahead, a
/// 90 degree left turn, then behind.
pub fn fruit_bearings() -> [f64; 3] {
    [0.0, -PI / 2.0, PI]
}

/// Full-tilt forward stick for `seconds` on a long straight floor.
pub fn generate_straight_joystick(seconds: f64, tick_rate: f64) -> Scenario {
    let ticks = (seconds * tick_rate).round() as usize;
    let samples = (0..ticks)
        .map(|i| InputSample::idle(i as f64 / tick_rate).with_left_stick(DVec2::new(0.0, 1.0)))
        .collect();
    let length = 2.5 * seconds + 20.0;
    let mesh = NavMesh::rectangle(DVec2::new(-5.0, -5.0), DVec2::new(5.0, length), 1, (length / 5.0).ceil() as usize)
        .expect("valid rectangle");
    Scenario {
        name: ScenarioName::Custom,
        label: "straight_joystick".into(),
        mesh,
        user_start: Pose::at(DVec3::ZERO),
        duration: seconds,
        script: Script::Inputs { samples },
        observer_position: DVec3::new(3.0, 0.0, -3.0),
        observer_yaw: 0.0,
    }
}

/// Looks up a built-in scenario by CLI name.
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "figure_eight" | "figure-eight" => Some(generate_figure_eight()),
        "fruit_course" | "fruit-course" => Some(generate_fruit_course()),
        "straight_joystick" | "straight-joystick" => Some(generate_straight_joystick(10.0, 60.0)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{xz_distance, yaw_delta, yaw_of};

    #[test]
    fn figure_eight_targets_and_schedule() {
        let scenario = generate_figure_eight();
        scenario.validate().unwrap();
        let Script::Teleports { schedule } = &scenario.script else {
            panic!("teleport script")
        };
        assert_eq!(schedule.len(), 11);
        let times: Vec<f64> = schedule.iter().map(|s| s.t).collect();
        assert_eq!(times, (0..=10).map(|k| 4.0 * k as f64).collect::<Vec<_>>());
        let (min, max) = schedule.iter().fold((DVec3::INFINITY, DVec3::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.target), hi.max(s.target))
        });
        assert!((max.x - min.x - 50.0).abs() <= 0.1);
        assert!((max.z - min.z - 10.0).abs() <= 0.1);
        assert!((xz_distance(scenario.observer_position, DVec3::ZERO) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn lemniscate_curve_box_is_exact() {
        let (mut lo, mut hi) = (DVec3::INFINITY, DVec3::NEG_INFINITY);
        for i in 0..200_000 {
            let p = lemniscate(TAU * i as f64 / 200_000.0);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        assert!((hi.x - lo.x - 50.0).abs() < 1e-9);
        assert!((hi.z - lo.z - 10.0).abs() < 1e-6);
    }

    #[test]
    fn fruit_course_geometry() {
        let scenario = generate_fruit_course();
        scenario.validate().unwrap();
        let targets = scenario.teleport_targets();
        assert_eq!(targets.len(), 4);
        let start = scenario.user_start.position;
        for t in &targets[..3] {
            assert!((xz_distance(start, *t) - 5.0).abs() < 1e-12);
        }
        // Relative turns the user makes to face each set from the previous facing.
        let bearings: Vec<f64> = targets[..3].iter().map(|t| yaw_of(*t - start)).collect();
        let turns: Vec<f64> = std::iter::once(bearings[0])
            .chain(bearings.windows(2).map(|w| yaw_delta(w[0], w[1])))
            .map(f64::to_degrees)
            .collect();
        assert!(turns[0].abs() < 1e-9);
        assert!((turns[1] + 90.0).abs() < 1e-9, "{turns:?}");
        assert!((turns[2].abs() - 90.0).abs() < 1e-9, "{turns:?}");
        assert!((yaw_delta(bearings[0], bearings[2]).abs() - PI).abs() < 1e-9);
        assert_eq!(targets[3], start);
    }

    #[test]
    fn off_mesh_scenario_is_rejected() {
        let mut scenario = generate_fruit_course();
        scenario.user_start = Pose::at(DVec3::new(50.0, 0.0, 0.0));
        assert!(matches!(scenario.validate(), Err(HarnessError::ScenarioMeshMismatch { .. })));
    }
}
