//! Deterministic grassland simulator.

pub mod camera;
pub mod lidar;
pub mod robot;
pub mod site;
pub mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::Pose2;

pub use camera::{CameraConfig, CameraObservation, ObservedFeature};
pub use lidar::{LidarConfig, LidarScan};
pub use robot::{BatteryConfig, Command, RobotConfig, RobotState};
pub use site::{edge_key, SiteConfig, SiteEdge, SiteNode};
pub use world::{DockLayout, DockPlacement, Landmark, Obstacle, WorldConfig, WorldMap};

/// Fixed control period, seconds.
pub const DT: f64 = 0.1;

/// Independent random streams derived from one scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    World = 0,
    Motion = 1,
    Camera = 2,
    Lidar = 3,
    Odometry = 4,
    Operator = 5,
    Vocabulary = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub world: WorldConfig,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub lidar: LidarConfig,
}

/// Raised when charging is requested away from the dock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("robot is outside the dock charging zone")]
pub struct NotInChargingZone;

#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub world: WorldMap,
    pub state: RobotState,
    /// Motion clock, seconds; derived from an integer nanosecond count so
    /// long runs do not drift.
    pub t: f64,
    clock_ns: u64,
    motion_rng: ChaCha8Rng,
    camera_rng: ChaCha8Rng,
    lidar_rng: ChaCha8Rng,
    scratch: Vec<u32>,
}

impl Simulator {
    pub fn new(
        config: SimConfig,
        site: Option<&SiteConfig>,
        seed: u64,
        pose: Pose2,
        battery: Option<f64>,
    ) -> Result<Self, ConfigError> {
        let world = WorldMap::generate(&config.world, site, &mut stream_rng(seed, Stream::World))?;
        let battery = battery.unwrap_or(config.robot.battery.capacity);
        if !(0.0..=config.robot.battery.capacity).contains(&battery) {
            return Err(ConfigError::Invalid("initial battery outside [0, capacity]".into()));
        }
        Ok(Self {
            state: RobotState::new(pose, battery),
            world,
            config,
            t: 0.0,
            clock_ns: 0,
            motion_rng: stream_rng(seed, Stream::Motion),
            camera_rng: stream_rng(seed, Stream::Camera),
            lidar_rng: stream_rng(seed, Stream::Lidar),
            scratch: Vec::new(),
        })
    }

    pub fn step(&mut self, command: Command, dt: f64) -> &RobotState {
        self.state = robot::step(&self.config.robot, &self.state, command, dt, &mut self.motion_rng);
        self.advance(dt);
        &self.state
    }

    /// Advance the clock while parked on the charger.
    pub fn charge(&mut self, dt: f64) -> Result<&RobotState, NotInChargingZone> {
        let docked = self
            .world
            .dock
            .is_some_and(|d| d.in_charging_zone(&self.state.pose));
        self.advance(dt);
        if !docked {
            return Err(NotInChargingZone);
        }
        self.state = robot::charge(&self.config.robot.battery, &self.state, dt);
        Ok(&self.state)
    }

    fn advance(&mut self, dt: f64) {
        self.clock_ns += (dt * 1e9).round() as u64;
        self.t = self.clock_ns as f64 / 1e9;
    }

    pub fn sense_camera(&mut self, decay_t: f64) -> CameraObservation {
        camera::sense_camera(
            &self.config.camera,
            &self.world,
            &self.state.pose,
            self.t,
            decay_t,
            &mut self.camera_rng,
            &mut self.scratch,
        )
    }

    pub fn sense_lidar(&mut self) -> LidarScan {
        lidar::sense_lidar(&self.config.lidar, &self.world, &self.state.pose, self.t, &mut self.lidar_rng)
    }

    /// Operator carries the robot somewhere; odometer is not advanced.
    pub fn teleport(&mut self, pose: Pose2) {
        self.state.pose = pose;
        self.state.linear_velocity = 0.0;
        self.state.angular_velocity = 0.0;
    }

    pub fn set_estop(&mut self, estop: bool) {
        self.state.estop = estop;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, Rect};

    fn cfg() -> SimConfig {
        SimConfig {
            world: WorldConfig {
                bounds: Rect::new(Point2::new(-5.0, -5.0), Point2::new(5.0, 5.0)),
                descriptor_dim: 4,
                landmark_zones: vec![],
                landmarks: vec![],
                obstacles: vec![],
                agents: vec![],
                dock: Some(DockPlacement { pose: Pose2::IDENTITY, layout: DockLayout::default() }),
                plots: Some(vec![]),
                plot_count: 0,
            },
            robot: RobotConfig::default(),
            camera: CameraConfig::default(),
            lidar: LidarConfig::default(),
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut s = Simulator::new(cfg(), None, 7, Pose2::new(2.0, 0.0, 0.0), None).unwrap();
            for _ in 0..100 {
                s.step(Command::new(0.5, 0.3), DT);
                s.sense_lidar();
            }
            s.state
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn charging_only_in_dock() {
        let mut s = Simulator::new(cfg(), None, 7, Pose2::new(2.0, 0.0, 0.0), Some(100.0)).unwrap();
        assert!(s.charge(1.0).is_err());
        assert_eq!(s.state.battery, 100.0);
        s.teleport(Pose2::new(0.5, 0.0, std::f64::consts::PI));
        s.charge(1.0).unwrap();
        assert_eq!(s.state.battery, 500.0);
    }

    #[test]
    fn full_speed_endurance_under_two_hours() {
        let mut c = cfg().clone();
        c.robot = c.robot.noiseless();
        c.world.bounds = Rect::new(Point2::new(-1e5, -1e5), Point2::new(1e5, 1e5));
        let mut s = Simulator::new(c, None, 1, Pose2::IDENTITY, None).unwrap();
        let mut ticks = 0u64;
        while !s.state.battery_empty {
            s.step(Command::new(1.0, 0.0), DT);
            ticks += 1;
        }
        let hours = ticks as f64 * DT / 3600.0;
        assert!((1.6..2.0).contains(&hours), "{hours}");
        assert!((s.state.odometer - ticks as f64 * DT).abs() < 1e-6);
    }
}
