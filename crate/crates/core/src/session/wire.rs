//! Wire protocol: one JSON object per frame behind a 4-byte big-endian length.
//!
//! ```text
//! +-------------------+---------------------------------------------+
//! | length (u32, BE)  | {"seq":..,"session_tick":..,"type":..,"payload":..} |
//! +-------------------+---------------------------------------------+
//! ```
//!
//! Unknown fields are ignored on decode; unknown `type` values are rejected.

use std::collections::BTreeMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avatar::Zone;
use crate::geom::Pose;
use crate::locomotion::{InputSample, LocomotionMode};
use crate::transitions::TransitionKind;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame body.
pub const MAX_FRAME_LEN: usize = 1 << 20;
const HEADER_LEN: usize = 4;

pub type UserId = u32;

/// Id in a Welcome for a connection that watches without a rig.
pub const SPECTATOR: UserId = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("sequence regression: got {got} after {last}")]
    SeqRegression { last: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvatarStyle {
    /// Autonomous agent avatar with long-distance transitions.
    #[default]
    Smart,
    /// Baseline that snaps to the rig every tick.
    Primitive,
}

/// Per-user choice of locomotion and avatar presentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Technique {
    pub locomotion: LocomotionMode,
    pub avatar: AvatarStyle,
    pub transition: TransitionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    /// Requested id; the server may assign another.
    #[serde(default)]
    pub user_id: Option<UserId>,
    pub name: String,
    #[serde(default = "default_protocol")]
    pub protocol_version: u32,
    #[serde(default)]
    pub technique: Option<Technique>,
}

fn default_protocol() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub user_id: UserId,
    pub protocol_version: u32,
    pub tick_rate: f64,
    pub snapshot: SessionSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFrame {
    pub user_id: UserId,
    pub sample: InputSample,
    /// Direct teleport request to a world point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teleport_to: Option<DVec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique: Option<Technique>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goodbye {
    #[serde(default)]
    pub user_id: Option<UserId>,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostView {
    pub pose: Pose,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarSnapshot {
    pub pose: Pose,
    pub zone: Zone,
    pub strafe_weight: f64,
    pub imitation_weight: f64,
    /// Ghosts of a finished transition that are still fading.
    #[serde(default)]
    pub fading_ghosts: Vec<GhostView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSnapshot {
    pub kind: TransitionKind,
    pub elapsed: f64,
    pub ghosts: Vec<GhostView>,
    pub dissolve_in_alpha: f64,
    pub dissolve_out_alpha: f64,
    /// Particle stream endpoints (from, to).
    pub stream: Option<[DVec3; 2]>,
    pub user_ghost: Option<Pose>,
    pub trail_pose: Option<Pose>,
    pub visible_to_self: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSnapshot {
    pub user_id: UserId,
    pub name: String,
    pub technique: Technique,
    pub rig_origin: Pose,
    pub head: Pose,
    pub left_hand: Pose,
    pub right_hand: Pose,
    pub avatar: AvatarSnapshot,
    pub transition: Option<TransitionSnapshot>,
    pub last_teleport_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_tick: u64,
    pub users: Vec<UserSnapshot>,
}

impl SessionSnapshot {
    pub fn user(&self, id: UserId) -> Option<&UserSnapshot> {
        self.users.iter().find(|u| u.user_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UnknownUser,
    SeqRegression,
    SessionFull,
    VersionMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Joined {
        user_id: UserId,
        name: String,
    },
    Left {
        user_id: UserId,
    },
    /// A rig jumped; one per teleport step or teleport request.
    Teleport {
        user_id: UserId,
        teleport_seq: u64,
        from: DVec3,
        to: DVec3,
    },
    TransitionStarted {
        user_id: UserId,
        kind: TransitionKind,
        gap: f64,
    },
    TransitionCompleted {
        user_id: UserId,
        kind: TransitionKind,
        duration: f64,
    },
    /// The avatar could not path to its user and was snapped instead.
    AvatarSnapped {
        user_id: UserId,
        reason: String,
    },
    Dropped {
        user_id: UserId,
        seq: u64,
        reason: DropReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum Payload {
    Hello(Hello),
    Welcome(Welcome),
    InputFrame(InputFrame),
    Snapshot(SessionSnapshot),
    Event(SessionEvent),
    Goodbye(Goodbye),
}

impl Payload {
    pub const TYPES: [&'static str; 6] = ["Hello", "Welcome", "InputFrame", "Snapshot", "Event", "Goodbye"];

    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::Hello(_) => "Hello",
            Payload::Welcome(_) => "Welcome",
            Payload::InputFrame(_) => "InputFrame",
            Payload::Snapshot(_) => "Snapshot",
            Payload::Event(_) => "Event",
            Payload::Goodbye(_) => "Goodbye",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub seq: u64,
    pub session_tick: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(seq: u64, session_tick: u64, payload: Payload) -> Self {
        Self { seq, session_tick, payload }
    }

    /// JSON body without the length prefix.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}

/// Length-prefixed frame for `msg`.
pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let body = msg.to_json();
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

/// Decodes exactly one frame; trailing or missing bytes are malformed.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let Some(header) = bytes.get(..HEADER_LEN) else {
        return Err(WireError::MalformedFrame(format!("{} byte frame has no length header", bytes.len())));
    };
    let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::MalformedFrame(format!("frame length {len} exceeds {MAX_FRAME_LEN}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != len {
        return Err(WireError::MalformedFrame(format!("header says {len} bytes, frame carries {}", body.len())));
    }
    decode_body(body)
}

/// Decodes a JSON frame body.
pub fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| WireError::MalformedFrame(e.to_string()))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| WireError::MalformedFrame("missing \"type\"".into()))?;
    if !Payload::TYPES.contains(&kind) {
        return Err(WireError::UnknownType(kind.to_string()));
    }
    serde_json::from_value(value).map_err(|e| WireError::MalformedFrame(e.to_string()))
}

/// Splits a byte stream into frame bodies.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame body, if buffered.
    pub fn next_body(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..HEADER_LEN].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME_LEN {
            return Err(WireError::MalformedFrame(format!("frame length {len} exceeds {MAX_FRAME_LEN}")));
        }
        if self.buf.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let body = self.buf[HEADER_LEN..HEADER_LEN + len].to_vec();
        self.buf.drain(..HEADER_LEN + len);
        Ok(Some(body))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Enforces strictly increasing `seq` per sender.
#[derive(Debug, Default, Clone)]
pub struct SeqTracker<K: Ord> {
    last: BTreeMap<K, u64>,
}

impl<K: Ord> SeqTracker<K> {
    pub fn new() -> Self {
        Self { last: BTreeMap::new() }
    }

    pub fn check(&mut self, sender: K, seq: u64) -> Result<(), WireError> {
        match self.last.get(&sender) {
            Some(&last) if seq <= last => Err(WireError::SeqRegression { last, got: seq }),
            _ => {
                self.last.insert(sender, seq);
                Ok(())
            }
        }
    }
}
