//! Scenario file: one JSON document describing the world, the robot, every
//! subsystem's parameters and what the operator does during the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docking::DockingConfig;
use crate::error::ConfigError;
use crate::geometry::Pose2;
use crate::localisation::vo::VoNoise;
use crate::localisation::LocaliserConfig;
use crate::mission::{MissionConfig, ReteachConfig};
use crate::safety::SafetyConfig;
use crate::sim::{CameraConfig, LidarConfig, RobotConfig, SimConfig, SiteConfig, WorldConfig};
use crate::teach_repeat::{RepeatConfig, TeachConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabularyConfig {
    pub words: usize,
    /// Descriptors drawn from the generated landmarks for k-means.
    pub sample: usize,
    pub iterations: usize,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            words: 256,
            sample: 2048,
            iterations: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    /// Appearance clock seconds per motion second.
    pub accel: f64,
    /// Appearance clock at t = 0.
    pub calendar_start: f64,
    /// Ticks aggregated per telemetry record (records also break on mode
    /// changes and events).
    pub telemetry_every: u32,
    /// Teleop setpoints older than this decay to a stop, seconds.
    pub teleop_timeout: f64,
    /// DOCKED must persist this long before charging starts, seconds.
    pub charge_delay: f64,
    /// Reverse distance out of the dock before turning to the staging node.
    pub undock_distance: f64,
    pub undock_speed: f64,
    /// Cap on run length when neither duration nor a campaign bounds it.
    pub max_duration: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            accel: 1.0,
            calendar_start: 0.0,
            telemetry_every: 1,
            teleop_timeout: 0.5,
            charge_delay: 1.0,
            undock_distance: 2.0,
            undock_speed: 0.3,
            max_duration: 6.0 * 3600.0,
        }
    }
}

/// How the scripted operator drives when teaching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorConfig {
    pub speed: f64,
    pub lookahead: f64,
    pub stop_radius: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            speed: 0.8,
            lookahead: 1.0,
            stop_radius: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Start {
    /// On the charger (requires a dock).
    Docked,
    Pose(Pose2),
    /// At a site node, facing `heading`.
    Node { code: String, heading: f64 },
}

/// Scripted operator actions, executed in order; each one waits for the
/// previous to finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Carry the robot to `from`, drive the site track to `to` in TEACH and
    /// assign the experience to that supergraph edge.
    Teach { from: String, to: String },
    /// Teach every site edge once, in file order.
    TeachAll,
    /// Repeat one taught edge without a mission.
    Repeat { from: String, to: String },
    Mission {
        targets: Vec<String>,
        #[serde(default)]
        id: Option<String>,
    },
    Dock,
    Carry(Start),
    /// Manual localisation at a node with an approximate heading.
    Initialise {
        node: String,
        #[serde(default)]
        heading: Option<f64>,
    },
    /// Re-teach every edge the recommender flags.
    Reteach,
    Wait { seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub days: u32,
    /// Day-of-campaign when daily missions begin, after the initial teach.
    pub first_mission_day: u32,
    /// Targets drawn per mission from plot nodes.
    pub targets_per_mission: usize,
    pub missions_per_day: u32,
    /// Motion seconds since the day started after which no mission starts.
    pub mission_cutoff: f64,
    /// Battery fraction required before dispatch.
    pub min_battery: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            days: 42,
            first_mission_day: 2,
            targets_per_mission: 6,
            missions_per_day: 1,
            mission_cutoff: 400.0,
            min_battery: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub world: WorldConfig,
    #[serde(default)]
    pub site: Option<SiteConfig>,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub vo: VoNoise,
    #[serde(default)]
    pub vocabulary: VocabularyConfig,
    #[serde(default)]
    pub localiser: LocaliserConfig,
    #[serde(default)]
    pub teach: TeachConfig,
    #[serde(default)]
    pub repeat: RepeatConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub docking: DockingConfig,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub reteach: ReteachConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub start: Option<Start>,
    #[serde(default)]
    pub initial_battery: Option<f64>,
    #[serde(default)]
    pub script: Vec<Action>,
    #[serde(default)]
    pub campaign: Option<CampaignConfig>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Schema(format!("{path}: {}", e.into_inner()))
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            world: self.world.clone(),
            robot: self.robot,
            camera: self.camera,
            lidar: self.lidar,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if let Some(site) = &self.site {
            site.validate()?;
        }
        let r = &self.runtime;
        if !(r.accel > 0.0 && r.accel.is_finite()) {
            return bad("runtime.accel: must be positive");
        }
        if r.telemetry_every == 0 {
            return bad("runtime.telemetry_every: must be >= 1");
        }
        if !(r.teleop_timeout > 0.0) {
            return bad("runtime.teleop_timeout: must be positive");
        }
        if !(self.robot.v_max > 0.0 && self.robot.w_max > 0.0) {
            return bad("robot: v_max and w_max must be positive");
        }
        if !(self.teach.keyframe_spacing > 0.0) {
            return bad("teach.keyframe_spacing: must be positive");
        }
        if self.vocabulary.words == 0 {
            return bad("vocabulary.words: must be positive");
        }
        if self.mission.battery_margin < 1.0 {
            return bad("mission.battery_margin: must be >= 1");
        }
        if matches!(self.start, Some(Start::Docked)) && self.world.dock.is_none() {
            return bad("start: docked requires world.dock");
        }
        let needs_site = self.campaign.is_some()
            || self.script.iter().any(|a| !matches!(a, Action::Wait { .. } | Action::Dock | Action::Carry(Start::Pose(_))));
        if needs_site && self.site.is_none() {
            return bad("script/campaign: a site section is required");
        }
        if let Some(site) = &self.site {
            let known = |c: &str| site.node(c).is_some();
            for (i, a) in self.script.iter().enumerate() {
                let codes: Vec<&String> = match a {
                    Action::Teach { from, to } | Action::Repeat { from, to } => vec![from, to],
                    Action::Mission { targets, .. } => targets.iter().collect(),
                    Action::Initialise { node, .. } => vec![node],
                    Action::Carry(Start::Node { code, .. }) => vec![code],
                    _ => vec![],
                };
                if let Some(c) = codes.into_iter().find(|c| !known(c)) {
                    return Err(ConfigError::Invalid(format!("script[{i}]: unknown node {c:?}")));
                }
            }
            if let Some(Start::Node { code, .. }) = &self.start {
                if !known(code) {
                    return Err(ConfigError::Invalid(format!("start: unknown node {code:?}")));
                }
            }
        }
        if self.campaign.is_some() && self.world.dock.is_none() {
            return bad("campaign: world.dock is required");
        }
        if let Some(b) = self.initial_battery {
            if !(0.0..=self.robot.battery.capacity).contains(&b) {
                return bad("initial_battery: outside [0, capacity]");
            }
        }
        Ok(())
    }
}
