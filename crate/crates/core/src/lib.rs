//! Smart Avatar and stuttered locomotion engine for shared virtual environments.
//!
//! Observers see every other user through an autonomous avatar that follows
//! its user over a navigation mesh and bridges teleports with a visible
//! transition (walking, afterimage, dissolve, foresight). Users move either
//! continuously or through short teleport steps derived from the same input.
//!
//! Coordinates are meters, Y-up and left-handed; the ground plane is XZ and
//! yaw is measured clockwise from +Z when viewed from above.

pub mod avatar;
pub mod geom;
pub mod harness;
pub mod locomotion;
pub mod navmesh;
pub mod session;
pub mod transitions;

pub use avatar::{AgentConfig, AgentOutput, AgentState, UserRig, Zone};
pub use geom::Pose;
pub use locomotion::{InputSample, LocomotionConfig, MapperState, MotionCommand};
pub use navmesh::{NavMesh, Path};
pub use session::{Session, SessionConfig, SessionSnapshot, WireMessage};
pub use transitions::{TransitionConfig, TransitionKind, TransitionState};
