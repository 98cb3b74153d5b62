//! Input-to-motion mappers.
//!
//! Smooth mappers emit one continuous displacement per tick. Stuttered
//! mappers turn the same input into fixed-length teleport steps and discrete
//! snap turns, covering the same ground without continuous viewport motion.

use std::io::BufRead;

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avatar::UserRig;
use crate::geom::{flatten, rotate_yaw, yaw_delta, yaw_of, Pose};

/// One frame of controller and tracking input. Hand and head poses are
/// rig-local.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSample {
    /// Seconds since the start of the trace.
    pub t: f64,
    /// x = right, y = forward, each in [-1, 1].
    #[serde(default)]
    pub left_stick: DVec2,
    #[serde(default)]
    pub right_stick: DVec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Pose>,
    #[serde(default = "default_left_hand")]
    pub left_hand: Pose,
    #[serde(default = "default_right_hand")]
    pub right_hand: Pose,
    #[serde(default)]
    pub left_grab: bool,
    #[serde(default)]
    pub right_grab: bool,
}

fn default_left_hand() -> Pose {
    UserRig::default_hand(1.75, -1.0)
}

fn default_right_hand() -> Pose {
    UserRig::default_hand(1.75, 1.0)
}

impl InputSample {
    /// Hands at rest, sticks centered.
    pub fn idle(t: f64) -> Self {
        Self {
            t,
            left_stick: DVec2::ZERO,
            right_stick: DVec2::ZERO,
            head: None,
            left_hand: default_left_hand(),
            right_hand: default_right_hand(),
            left_grab: false,
            right_grab: false,
        }
    }

    pub fn with_left_stick(mut self, stick: DVec2) -> Self {
        self.left_stick = stick;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocomotionConfig {
    pub max_joystick_speed: f64,
    pub step_length: f64,
    /// Snap turn angle in radians.
    pub turn_step: f64,
    /// Divides the stuttered joystick countdown; larger means faster stepping.
    pub countdown_multiplier: f64,
    /// Scale the stuttered joystick countdown with stick tilt.
    pub tilt_dependent_countdown: bool,
    pub max_pushpull_multiplier: f64,
    pub chest_height: f64,
    pub hip_height: f64,
    pub stick_deadzone: f64,
    /// Continuous yaw rate at full right-stick deflection, rad/s.
    pub smooth_turn_speed: f64,
    pub snap_trigger: f64,
    pub snap_rearm: f64,
}

impl Default for LocomotionConfig {
    fn default() -> Self {
        Self {
            max_joystick_speed: 2.5,
            step_length: 0.5,
            turn_step: std::f64::consts::FRAC_PI_6,
            countdown_multiplier: 1.0,
            tilt_dependent_countdown: true,
            max_pushpull_multiplier: 4.0,
            chest_height: 1.35,
            hip_height: 0.95,
            stick_deadzone: 0.1,
            smooth_turn_speed: std::f64::consts::FRAC_PI_2,
            snap_trigger: 0.5,
            snap_rearm: 0.3,
        }
    }
}

#[derive(Debug, Error)]
pub enum LocomotionError {
    #[error("invalid locomotion config: {0}")]
    InvalidConfig(&'static str),
    #[error("corrupt trace at line {line}: {message}")]
    CorruptTrace { line: usize, message: String },
    #[error("failed to read trace: {0}")]
    Io(#[from] std::io::Error),
}

impl LocomotionConfig {
    pub fn validate(&self) -> Result<(), LocomotionError> {
        if !(self.hip_height < self.chest_height) {
            return Err(LocomotionError::InvalidConfig("hip_height must be below chest_height"));
        }
        if !(self.step_length > 0.0 && self.turn_step > 0.0) {
            return Err(LocomotionError::InvalidConfig("step_length and turn_step must be positive"));
        }
        if !(self.max_pushpull_multiplier >= 1.0 && self.countdown_multiplier >= 1.0) {
            return Err(LocomotionError::InvalidConfig("multipliers must be at least 1"));
        }
        if !(self.max_joystick_speed > 0.0) {
            return Err(LocomotionError::InvalidConfig("max_joystick_speed must be positive"));
        }
        if !(0.0..1.0).contains(&self.stick_deadzone) || !(self.snap_rearm < self.snap_trigger) {
            return Err(LocomotionError::InvalidConfig("bad stick thresholds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocomotionMode {
    #[default]
    SmoothJoystick,
    StutteredJoystick,
    SmoothPushPull,
    StutteredPushPull,
}

impl LocomotionMode {
    pub fn is_stuttered(self) -> bool {
        matches!(self, LocomotionMode::StutteredJoystick | LocomotionMode::StutteredPushPull)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionCommand {
    /// Per-tick rig displacement in the XZ plane plus yaw change.
    Continuous { delta_position: DVec3, delta_yaw: f64 },
    /// Instantaneous rig jump; horizontal only.
    Teleport { target_offset: DVec3 },
    /// Instantaneous rotation by a fixed step.
    SnapTurn { delta_yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperState {
    /// Left-hand drag anchor, rig-local.
    pub anchor_left: Option<DVec3>,
    /// World bearing of the right hand around the head when the turn grab began.
    pub anchor_right: Option<f64>,
    /// Rig position when the current left-hand drag began.
    pub grab_origin: Option<DVec3>,
    /// Stuttered drag not yet spent on teleport steps, rig-local XZ.
    pub accumulated_drag: DVec3,
    pub countdown_remaining: f64,
    pub stepping: bool,
    /// Net yaw emitted as snap turns.
    pub yaw_accumulator: f64,
    pub snap_armed: bool,
}

impl Default for MapperState {
    fn default() -> Self {
        Self {
            anchor_left: None,
            anchor_right: None,
            grab_origin: None,
            accumulated_drag: DVec3::ZERO,
            countdown_remaining: 0.0,
            stepping: false,
            yaw_accumulator: 0.0,
            snap_armed: true,
        }
    }
}

/// PushPull speed multiplier from the dragging hand's height above the floor.
pub fn velocity_multiplier(hand_y: f64, cfg: &LocomotionConfig) -> f64 {
    if hand_y >= cfg.chest_height {
        1.0
    } else if hand_y <= cfg.hip_height {
        cfg.max_pushpull_multiplier
    } else {
        let t = (cfg.chest_height - hand_y) / (cfg.chest_height - cfg.hip_height);
        1.0 + (cfg.max_pushpull_multiplier - 1.0) * t
    }
}

/// Applies the radial dead zone and rescales the remainder to [0, 1].
pub fn rescale_stick(stick: DVec2, deadzone: f64) -> DVec2 {
    let magnitude = stick.length().min(1.0);
    if magnitude <= deadzone || magnitude == 0.0 {
        return DVec2::ZERO;
    }
    let tilt = (magnitude - deadzone) / (1.0 - deadzone);
    stick.normalize() * tilt
}

fn rescale_axis(value: f64, deadzone: f64) -> f64 {
    let magnitude = value.abs().min(1.0);
    if magnitude <= deadzone {
        0.0
    } else {
        ((magnitude - deadzone) / (1.0 - deadzone)).copysign(value)
    }
}

/// World-space planar vector for a stick deflection under the given rig yaw.
fn stick_to_world(stick: DVec2, rig_yaw: f64) -> DVec3 {
    rotate_yaw(DVec3::new(stick.x, 0.0, stick.y), rig_yaw)
}

pub fn map_smooth_joystick(sample: &InputSample, cfg: &LocomotionConfig, dt: f64, rig_yaw: f64) -> Vec<MotionCommand> {
    let stick = rescale_stick(sample.left_stick, cfg.stick_deadzone);
    let delta_position = stick_to_world(stick, rig_yaw) * cfg.max_joystick_speed * dt;
    let delta_yaw = rescale_axis(sample.right_stick.x, cfg.stick_deadzone) * cfg.smooth_turn_speed * dt;
    vec![MotionCommand::Continuous { delta_position, delta_yaw }]
}

/// Seconds between stuttered joystick steps at the given rescaled tilt.
pub fn step_interval(tilt: f64, cfg: &LocomotionConfig) -> f64 {
    let speed = if cfg.tilt_dependent_countdown {
        cfg.max_joystick_speed * tilt
    } else {
        cfg.max_joystick_speed
    };
    cfg.step_length / speed / cfg.countdown_multiplier
}

pub fn map_stuttered_joystick(
    sample: &InputSample,
    state: &MapperState,
    cfg: &LocomotionConfig,
    dt: f64,
    rig_yaw: f64,
) -> (Vec<MotionCommand>, MapperState) {
    let (mut commands, mut next) = snap_turn(sample.right_stick.x, state, cfg);
    let stick = rescale_stick(sample.left_stick, cfg.stick_deadzone);
    let tilt = stick.length();
    if tilt == 0.0 {
        next.stepping = false;
        next.countdown_remaining = 0.0;
        return (commands, next);
    }
    let step = stick_to_world(stick / tilt, rig_yaw) * cfg.step_length;
    let interval = step_interval(tilt, cfg);
    if !next.stepping {
        commands.push(MotionCommand::Teleport { target_offset: step });
        next.stepping = true;
        next.countdown_remaining = interval;
    } else {
        next.countdown_remaining -= dt;
        while next.countdown_remaining <= 1e-9 {
            commands.push(MotionCommand::Teleport { target_offset: step });
            next.countdown_remaining += interval;
        }
    }
    (commands, next)
}

/// Edge-triggered snap turning with hysteresis on the right stick's X axis.
pub fn snap_turn(right_stick_x: f64, state: &MapperState, cfg: &LocomotionConfig) -> (Vec<MotionCommand>, MapperState) {
    let mut next = *state;
    let mut commands = Vec::new();
    if next.snap_armed && right_stick_x.abs() >= cfg.snap_trigger {
        let delta_yaw = cfg.turn_step.copysign(right_stick_x);
        commands.push(MotionCommand::SnapTurn { delta_yaw });
        next.yaw_accumulator += delta_yaw;
        next.snap_armed = false;
    } else if !next.snap_armed && right_stick_x.abs() < cfg.snap_rearm {
        next.snap_armed = true;
    }
    (commands, next)
}

/// Bearing of the right hand around the head, in rig-local terms.
fn right_hand_bearing(sample: &InputSample, rig: &UserRig) -> f64 {
    let head = sample.head.unwrap_or_else(|| rig.local_head());
    yaw_of(flatten(sample.right_hand.position - head.position))
}

/// Yaw change that keeps the right hand's world bearing fixed.
fn anchor_turn(sample: &InputSample, next: &mut MapperState, rig: &UserRig) -> f64 {
    if !sample.right_grab {
        next.anchor_right = None;
        return 0.0;
    }
    let bearing = right_hand_bearing(sample, rig);
    let world = *next.anchor_right.get_or_insert(rig.rig_origin.yaw + bearing);
    yaw_delta(rig.rig_origin.yaw, world - bearing)
}

pub fn map_smooth_pushpull(
    sample: &InputSample,
    state: &MapperState,
    cfg: &LocomotionConfig,
    rig: &UserRig,
) -> (Vec<MotionCommand>, MapperState) {
    let mut next = *state;
    let mut commands = Vec::new();
    let hand = sample.left_hand.position;
    if sample.left_grab {
        let anchor = *next.anchor_left.get_or_insert(hand);
        let origin = *next.grab_origin.get_or_insert(rig.position());
        let drag = flatten(anchor - hand) * velocity_multiplier(hand.y, cfg);
        let desired = origin + rotate_yaw(drag, rig.rig_origin.yaw);
        let delta_position = flatten(desired - rig.position());
        commands.push(MotionCommand::Continuous {
            delta_position,
            delta_yaw: 0.0,
        });
    } else {
        next.anchor_left = None;
        next.grab_origin = None;
    }
    let delta_yaw = anchor_turn(sample, &mut next, rig);
    if delta_yaw != 0.0 {
        commands.push(MotionCommand::Continuous {
            delta_position: DVec3::ZERO,
            delta_yaw,
        });
    }
    (commands, next)
}

pub fn map_stuttered_pushpull(
    sample: &InputSample,
    state: &MapperState,
    cfg: &LocomotionConfig,
    rig: &UserRig,
) -> (Vec<MotionCommand>, MapperState) {
    let mut next = *state;
    let mut commands = Vec::new();
    let hand = sample.left_hand.position;
    if sample.left_grab {
        if let Some(anchor) = next.anchor_left {
            next.accumulated_drag += flatten(anchor - hand);
        } else {
            next.accumulated_drag = DVec3::ZERO;
        }
        next.anchor_left = Some(hand);
        let threshold = cfg.step_length / velocity_multiplier(hand.y, cfg);
        while next.accumulated_drag.length() >= threshold * (1.0 - 1e-12) {
            let direction = next.accumulated_drag.normalize();
            commands.push(MotionCommand::Teleport {
                target_offset: rotate_yaw(direction * cfg.step_length, rig.rig_origin.yaw),
            });
            next.accumulated_drag -= direction * threshold;
        }
    } else {
        next.anchor_left = None;
        next.accumulated_drag = DVec3::ZERO;
    }
    let mut pending = anchor_turn(sample, &mut next, rig);
    while pending.abs() >= cfg.turn_step * (1.0 - 1e-12) {
        let delta_yaw = cfg.turn_step.copysign(pending);
        commands.push(MotionCommand::SnapTurn { delta_yaw });
        next.yaw_accumulator += delta_yaw;
        pending -= delta_yaw;
    }
    (commands, next)
}

/// Runs the mapper for `mode` on one sample.
pub fn map_input(
    mode: LocomotionMode,
    sample: &InputSample,
    state: &MapperState,
    cfg: &LocomotionConfig,
    dt: f64,
    rig: &UserRig,
) -> (Vec<MotionCommand>, MapperState) {
    match mode {
        LocomotionMode::SmoothJoystick => (map_smooth_joystick(sample, cfg, dt, rig.rig_origin.yaw), *state),
        LocomotionMode::StutteredJoystick => map_stuttered_joystick(sample, state, cfg, dt, rig.rig_origin.yaw),
        LocomotionMode::SmoothPushPull => map_smooth_pushpull(sample, state, cfg, rig),
        LocomotionMode::StutteredPushPull => map_stuttered_pushpull(sample, state, cfg, rig),
    }
}

/// Reads a JSON-lines input trace. Blank lines are skipped; timestamps must
/// increase strictly.
pub fn read_input_trace(reader: impl BufRead) -> Result<Vec<InputSample>, LocomotionError> {
    let mut samples: Vec<InputSample> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: InputSample = serde_json::from_str(&line).map_err(|e| LocomotionError::CorruptTrace {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = samples.last() {
            if !(sample.t > prev.t) {
                return Err(LocomotionError::CorruptTrace {
                    line: i + 1,
                    message: format!("timestamp {} does not follow {}", sample.t, prev.t),
                });
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_input_trace(samples: &[InputSample], mut writer: impl std::io::Write) -> std::io::Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut writer, sample)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_6, PI};

    const DT: f64 = 1.0 / 60.0;

    fn teleports(commands: &[MotionCommand]) -> Vec<DVec3> {
        commands
            .iter()
            .filter_map(|c| match c {
                MotionCommand::Teleport { target_offset } => Some(*target_offset),
                _ => None,
            })
            .collect()
    }

    fn continuous(commands: &[MotionCommand]) -> DVec3 {
        commands
            .iter()
            .map(|c| match c {
                MotionCommand::Continuous { delta_position, .. } => *delta_position,
                _ => DVec3::ZERO,
            })
            .sum()
    }

    fn rig() -> UserRig {
        UserRig::standing(Pose::default(), 1.75)
    }

    #[test]
    fn multiplier_endpoints_and_midpoint() {
        let cfg = LocomotionConfig::default();
        assert_eq!(velocity_multiplier(1.35, &cfg), 1.0);
        assert_eq!(velocity_multiplier(0.95, &cfg), 4.0);
        assert!((velocity_multiplier(1.15, &cfg) - 2.5).abs() < 1e-12);
        assert_eq!(velocity_multiplier(2.0, &cfg), 1.0);
        assert_eq!(velocity_multiplier(0.1, &cfg), 4.0);
    }

    #[test]
    fn smooth_joystick_speed_is_linear_in_tilt() {
        let cfg = LocomotionConfig::default();
        let full = map_smooth_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::Y), &cfg, DT, 0.0);
        let d = continuous(&full);
        assert!((d - DVec3::new(0.0, 0.0, 2.5 / 60.0)).length() < 1e-15);

        let dead = map_smooth_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::new(0.0, 0.05)), &cfg, DT, 0.0);
        assert_eq!(continuous(&dead), DVec3::ZERO);

        // raw 0.55 rescales to half tilt past the 0.1 dead zone
        let half = map_smooth_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::new(0.0, 0.55)), &cfg, DT, 0.0);
        assert!((continuous(&half).length() - 1.25 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_joystick_follows_rig_yaw() {
        let cfg = LocomotionConfig::default();
        let cmds = map_smooth_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::Y), &cfg, 1.0, PI / 2.0);
        assert!((continuous(&cmds) - DVec3::new(2.5, 0.0, 0.0)).length() < 1e-12);
    }

    /// Event-driven countdown oracle: steps at 0, interval, 2*interval, ...
    /// while the stick is held over `[0, duration)` sampled at `dt`.
    fn countdown_oracle(duration_ticks: usize, interval: f64, dt: f64) -> usize {
        let ticks_per_step = (interval / dt).round() as usize;
        (0..duration_ticks).filter(|k| k % ticks_per_step == 0).count()
    }

    #[test]
    fn stuttered_joystick_full_tilt_ten_seconds() {
        let cfg = LocomotionConfig::default();
        let mut state = MapperState::default();
        let mut steps = Vec::new();
        let mut smooth = DVec3::ZERO;
        for k in 0..600 {
            let s = InputSample::idle(k as f64 * DT).with_left_stick(DVec2::Y);
            let (cmds, next) = map_stuttered_joystick(&s, &state, &cfg, DT, 0.0);
            state = next;
            steps.extend(teleports(&cmds));
            smooth += continuous(&map_smooth_joystick(&s, &cfg, DT, 0.0));
        }
        assert_eq!(steps.len(), countdown_oracle(600, 0.2, DT));
        assert_eq!(steps.len(), 50);
        let net: DVec3 = steps.iter().sum();
        assert!((net.length() - 25.0).abs() < 1e-9);
        assert!((smooth.length() - 25.0).abs() < 1e-9);
        assert!((net.length() - smooth.length()).abs() <= cfg.step_length);
    }

    #[test]
    fn stuttered_joystick_idle_and_release() {
        let cfg = LocomotionConfig::default();
        let (cmds, state) = map_stuttered_joystick(&InputSample::idle(0.0), &MapperState::default(), &cfg, DT, 0.0);
        assert!(cmds.is_empty());
        let (cmds, state) = map_stuttered_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::X), &state, &cfg, DT, 0.0);
        assert_eq!(teleports(&cmds), vec![DVec3::new(0.5, 0.0, 0.0)]);
        let (_, state) = map_stuttered_joystick(&InputSample::idle(0.0), &state, &cfg, DT, 0.0);
        assert!(!state.stepping);
        // re-tilting steps immediately again
        let (cmds, _) = map_stuttered_joystick(&InputSample::idle(0.0).with_left_stick(DVec2::X), &state, &cfg, DT, 0.0);
        assert_eq!(teleports(&cmds).len(), 1);
    }

    #[test]
    fn fixed_countdown_ignores_tilt() {
        let cfg = LocomotionConfig {
            tilt_dependent_countdown: false,
            countdown_multiplier: 2.0,
            ..LocomotionConfig::default()
        };
        assert!((step_interval(0.3, &cfg) - 0.1).abs() < 1e-12);
        let tilt_cfg = LocomotionConfig::default();
        assert!((step_interval(0.5, &tilt_cfg) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn snap_turn_is_edge_triggered() {
        let cfg = LocomotionConfig::default();
        let (cmds, state) = snap_turn(0.0, &MapperState::default(), &cfg);
        assert!(cmds.is_empty());
        let (cmds, mut state) = snap_turn(1.0, &state, &cfg);
        assert_eq!(cmds, vec![MotionCommand::SnapTurn { delta_yaw: FRAC_PI_6 }]);
        for _ in 0..300 {
            let (cmds, next) = snap_turn(1.0, &state, &cfg);
            assert!(cmds.is_empty());
            state = next;
        }
        // 0.4 is inside the hysteresis band: no re-arm
        let (_, state) = snap_turn(0.4, &state, &cfg);
        let (cmds, _) = snap_turn(1.0, &state, &cfg);
        assert!(cmds.is_empty());
    }

    #[test]
    fn six_flicks_make_half_a_turn() {
        let cfg = LocomotionConfig::default();
        let mut state = MapperState::default();
        let mut total = 0.0;
        for _ in 0..6 {
            for x in [0.0, 1.0, 0.0] {
                let (cmds, next) = snap_turn(x, &state, &cfg);
                state = next;
                for c in cmds {
                    if let MotionCommand::SnapTurn { delta_yaw } = c {
                        total += delta_yaw;
                    }
                }
            }
        }
        assert!((total - PI).abs() < 1e-12);
        assert!((state.yaw_accumulator - PI).abs() < 1e-12);
    }

    fn grab(hand: DVec3) -> InputSample {
        InputSample {
            left_hand: Pose::at(hand),
            left_grab: true,
            ..InputSample::idle(0.0)
        }
    }

    #[test]
    fn smooth_pushpull_drags_world() {
        let cfg = LocomotionConfig::default();
        for (height, expected) in [(1.35, 0.3), (0.95, 1.2)] {
            let rig = rig();
            let (_, state) = map_smooth_pushpull(&grab(DVec3::new(0.0, height, 0.4)), &MapperState::default(), &cfg, &rig);
            let (cmds, _) = map_smooth_pushpull(&grab(DVec3::new(0.0, height, 0.1)), &state, &cfg, &rig);
            let d = continuous(&cmds);
            assert!((d - DVec3::new(0.0, 0.0, expected)).length() < 1e-12, "{height}: {d}");
        }
        // vertical hand motion only
        let rig = rig();
        let (_, state) = map_smooth_pushpull(&grab(DVec3::new(0.0, 1.5, 0.4)), &MapperState::default(), &cfg, &rig);
        let (cmds, _) = map_smooth_pushpull(&grab(DVec3::new(0.0, 1.9, 0.4)), &state, &cfg, &rig);
        assert_eq!(continuous(&cmds), DVec3::ZERO);
    }

    #[test]
    fn stuttered_pushpull_steps_and_keeps_residual() {
        let cfg = LocomotionConfig {
            step_length: 0.25,
            ..LocomotionConfig::default()
        };
        let rig = rig();
        let (_, state) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 1.4, 0.7)), &MapperState::default(), &cfg, &rig);
        let (cmds, state) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 1.4, 0.1)), &state, &cfg, &rig);
        let steps = teleports(&cmds);
        assert_eq!(steps.len(), 2);
        for s in &steps {
            assert!((s.length() - 0.25).abs() < 1e-12);
            assert_eq!(s.y, 0.0);
        }
        assert!((state.accumulated_drag.length() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn stuttered_pushpull_small_drag_then_release() {
        let cfg = LocomotionConfig {
            step_length: 0.25,
            ..LocomotionConfig::default()
        };
        let rig = rig();
        let (_, state) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 1.4, 0.5)), &MapperState::default(), &cfg, &rig);
        let (cmds, state) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 1.4, 0.3)), &state, &cfg, &rig);
        assert!(teleports(&cmds).is_empty());
        let (cmds, state) = map_stuttered_pushpull(&InputSample::idle(0.0), &state, &cfg, &rig);
        assert!(cmds.is_empty());
        assert_eq!(state.accumulated_drag, DVec3::ZERO);
    }

    /// Accumulation oracle: count threshold crossings of a drag sampled in
    /// small increments, spending one threshold per step.
    fn accumulation_oracle(total_drag: f64, threshold: f64) -> usize {
        let mut acc = 0.0;
        let mut steps = 0;
        for _ in 0..1000 {
            acc += total_drag / 1000.0;
            while acc >= threshold - 1e-12 {
                acc -= threshold;
                steps += 1;
            }
        }
        steps
    }

    #[test]
    fn stuttered_pushpull_at_hip_height() {
        let cfg = LocomotionConfig {
            step_length: 0.25,
            ..LocomotionConfig::default()
        };
        let threshold = cfg.step_length / velocity_multiplier(0.95, &cfg);
        assert!((threshold - 0.0625).abs() < 1e-15);
        let rig = rig();
        let (_, state) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 0.95, 0.5)), &MapperState::default(), &cfg, &rig);
        let (cmds, _) = map_stuttered_pushpull(&grab(DVec3::new(0.0, 0.95, 0.25)), &state, &cfg, &rig);
        let steps = teleports(&cmds);
        assert_eq!(steps.len(), accumulation_oracle(0.25, threshold));
        assert_eq!(steps.len(), 4);
        assert!(steps.iter().all(|s| (s.length() - 0.25).abs() < 1e-12));
    }

    #[test]
    fn anchor_turning_keeps_hand_bearing() {
        let cfg = LocomotionConfig::default();
        let rig = rig();
        let head = rig.local_head().position;
        let right = |x: f64, z: f64| InputSample {
            right_hand: Pose::at(head + DVec3::new(x, -0.3, z)),
            right_grab: true,
            ..InputSample::idle(0.0)
        };
        let (_, state) = map_smooth_pushpull(&right(0.0, 0.5), &MapperState::default(), &cfg, &rig);
        // hand swept 45 degrees to the right: the rig turns 45 degrees left
        let (cmds, _) = map_smooth_pushpull(&right(0.5, 0.5), &state, &cfg, &rig);
        let yaw: f64 = cmds
            .iter()
            .map(|c| match c {
                MotionCommand::Continuous { delta_yaw, .. } => *delta_yaw,
                _ => 0.0,
            })
            .sum();
        assert!((yaw + PI / 4.0).abs() < 1e-12);

        let (_, state) = map_stuttered_pushpull(&right(0.0, 0.5), &MapperState::default(), &cfg, &rig);
        let (cmds, _) = map_stuttered_pushpull(&right(0.5, 0.5), &state, &cfg, &rig);
        assert_eq!(cmds, vec![MotionCommand::SnapTurn { delta_yaw: -FRAC_PI_6 }]);
    }

    #[test]
    fn trace_reader_rejects_out_of_order() {
        let mut buf = Vec::new();
        write_input_trace(&[InputSample::idle(0.0), InputSample::idle(0.1)], &mut buf).unwrap();
        let back = read_input_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);

        let bad = format!(
            "{}\n{}\n",
            serde_json::to_string(&InputSample::idle(0.5)).unwrap(),
            serde_json::to_string(&InputSample::idle(0.2)).unwrap()
        );
        match read_input_trace(bad.as_bytes()) {
            Err(LocomotionError::CorruptTrace { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt trace, got {other:?}"),
        }
        match read_input_trace("{\"t\": 0}\nnot json\n".as_bytes()) {
            Err(LocomotionError::CorruptTrace { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt trace, got {other:?}"),
        }
    }
}
