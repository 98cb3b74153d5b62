//! JSON configuration file.
//!
//! ```json
//! {
//!   "session": {"tick_rate": 60, "max_users": 16, "mesh": "floor.json"},
//!   "agent": {"base_max_speed": 3.5},
//!   "locomotion": {"step_length": 0.5},
//!   "transition": {"kind": "dissolve"}
//! }
//! ```
//!
//! Every section and field is optional; missing values take the defaults.
//! Unknown fields are rejected so typos surface as validation errors.

use std::path::{Path, PathBuf};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::avatar::AgentConfig;
use crate::locomotion::LocomotionConfig;
use crate::session::{SessionConfig, Technique};
use crate::transitions::TransitionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub tick_rate: f64,
    pub max_users: usize,
    pub user_height: f64,
    pub spawn: DVec3,
    pub default_technique: Technique,
    /// Mesh file, relative to the config file.
    pub mesh: Option<PathBuf>,
}

impl Default for SessionSection {
    fn default() -> Self {
        let d = SessionConfig::default();
        Self {
            tick_rate: d.tick_rate,
            max_users: d.max_users,
            user_height: d.user_height,
            spawn: d.spawn,
            default_technique: d.default_technique,
            mesh: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub session: SessionSection,
    pub agent: AgentConfig,
    pub locomotion: LocomotionConfig,
    pub transition: TransitionConfig,
}

impl ConfigFile {
    pub fn from_json_str(json: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(json).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Loads a config file and resolves its mesh path against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut file = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        if let (Some(mesh), Some(dir)) = (&file.session.mesh, path.parent()) {
            if mesh.is_relative() {
                file.session.mesh = Some(dir.join(mesh));
            }
        }
        Ok(file)
    }

    pub fn session_config(&self) -> Result<SessionConfig, HarnessError> {
        let cfg = SessionConfig {
            tick_rate: self.session.tick_rate,
            max_users: self.session.max_users,
            user_height: self.session.user_height,
            spawn: self.session.spawn,
            default_technique: self.session.default_technique,
            agent: self.agent,
            locomotion: self.locomotion,
            transition: self.transition,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
