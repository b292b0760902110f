//! Runway docking state machine.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Point2, Pose2};
use crate::sim::{Command, LidarScan};

use super::matching::{match_dock, DockFix, DockModel, MatchConfig};
use super::segments::{extract_segments, ExtractConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric output limit.
    pub clamp: f64,
    /// Symmetric limit on the integral state.
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
}

fn default_integral_limit() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    integral: f64,
    prev: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            prev: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// The integral only accumulates while the output is unsaturated.
    pub fn update(&mut self, err: f64, dt: f64) -> f64 {
        let g = self.gains;
        let deriv = match self.prev {
            Some(p) if dt > 0.0 => (err - p) / dt,
            _ => 0.0,
        };
        self.prev = Some(err);
        let trial = (self.integral + err * dt).clamp(-g.integral_limit, g.integral_limit);
        let raw = g.kp * err + g.ki * trial + g.kd * deriv;
        if raw.abs() <= g.clamp {
            self.integral = trial;
        }
        (g.kp * err + g.ki * self.integral + g.kd * deriv).clamp(-g.clamp, g.clamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DockingPhase {
    ApproachRunway,
    Align,
    RunwayTrack,
    Docked,
    Searching,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DockingEvent {
    Phase { from: DockingPhase, to: DockingPhase },
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DockingConfig {
    pub speed_pid: PidGains,
    pub heading_pid: PidGains,
    /// Lateral offset from the runway line that triggers the approach leg.
    pub d_runway: f64,
    pub d_docked: f64,
    /// Commanded speed below which the robot counts as stopped.
    pub v_docked: f64,
    /// Radians.
    pub align_tolerance: f64,
    pub t_unseen: f64,
    pub t_search: f64,
    pub approach_speed: f64,
    pub turn_rate: f64,
    pub search_rate: f64,
    /// Distance ahead on the runway line used as the heading target.
    pub runway_lookahead: f64,
    pub extract: ExtractConfig,
    pub matching: MatchConfig,
}

impl Default for DockingConfig {
    fn default() -> Self {
        Self {
            speed_pid: PidGains {
                kp: 0.8,
                ki: 0.05,
                kd: 0.0,
                clamp: 0.4,
                integral_limit: 0.1,
            },
            heading_pid: PidGains {
                kp: 2.0,
                ki: 0.0,
                kd: 0.1,
                clamp: 0.8,
                integral_limit: 0.1,
            },
            d_runway: 0.3,
            d_docked: 0.03,
            v_docked: 0.01,
            align_tolerance: 0.1,
            t_unseen: 2.0,
            t_search: 15.0,
            approach_speed: 0.3,
            turn_rate: 0.8,
            search_rate: 0.5,
            runway_lookahead: 0.35,
            extract: ExtractConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DockingController {
    pub config: DockingConfig,
    pub model: DockModel,
    phase: DockingPhase,
    last_seen: Side,
    /// Dock frame in the robot frame, dead-reckoned between fixes.
    estimate: Option<Pose2>,
    unseen_for: f64,
    search_for: f64,
    speed: Pid,
    heading: Pid,
}

impl DockingController {
    pub fn new(config: DockingConfig, model: DockModel) -> Self {
        Self {
            speed: Pid::new(config.speed_pid),
            heading: Pid::new(config.heading_pid),
            config,
            model,
            phase: DockingPhase::ApproachRunway,
            last_seen: Side::Left,
            estimate: None,
            unseen_for: 0.0,
            search_for: 0.0,
        }
    }

    pub fn phase(&self) -> DockingPhase {
        self.phase
    }

    pub fn last_seen(&self) -> Side {
        self.last_seen
    }

    pub fn estimate(&self) -> Option<Pose2> {
        self.estimate
    }

    /// Seed the estimate, e.g. from the map when handing over at staging.
    pub fn set_estimate(&mut self, dock_in_robot: Pose2) {
        self.estimate = Some(dock_in_robot);
    }

    /// Carry the estimate through robot motion without a fix or control.
    pub fn dead_reckon(&mut self, odo_delta: &Pose2) {
        self.estimate = self.estimate.map(|e| odo_delta.inverse().compose(&e));
    }

    /// Dock wall segments in the robot frame, for the safety exemption.
    pub fn dock_segments(&self) -> Vec<(Point2, Point2)> {
        self.estimate.map(|e| self.model.segments_in(&e)).unwrap_or_default()
    }

    /// Extract and match on a scan, using the current estimate as prior.
    pub fn perceive(&self, scan: &LidarScan) -> Option<DockFix> {
        let centre = self.model.segments.iter().fold(Point2::ORIGIN, |a, s| a + s.0 + s.1).scale(0.5 / self.model.segments.len() as f64);
        let prior_pt = self.estimate.map(|e| e.transform_point(centre));
        let segs = extract_segments(&scan.points(), prior_pt, &self.config.extract);
        let fix = match_dock(&segs, &self.model, self.estimate.as_ref(), scan.timestamp, &self.config.matching);
        // A stale prior must not lock the detector out forever.
        fix.or_else(|| {
            self.estimate
                .filter(|_| self.unseen_for > 0.0)
                .and_then(|_| match_dock(&segs, &self.model, None, scan.timestamp, &self.config.matching))
        })
    }

    fn set_phase(&mut self, to: DockingPhase, events: &mut Vec<DockingEvent>) {
        if to != self.phase {
            events.push(DockingEvent::Phase { from: self.phase, to });
            self.phase = to;
            self.speed.reset();
            self.heading.reset();
        }
    }

    /// One control step. `odo_delta` is the robot motion since the last tick.
    pub fn tick(&mut self, fix: Option<&DockFix>, odo_delta: &Pose2, dt: f64) -> (Command, Vec<DockingEvent>) {
        let mut events = Vec::new();
        if matches!(self.phase, DockingPhase::Docked | DockingPhase::Failed) {
            return (Command::STOP, events);
        }
        match fix {
            Some(f) => {
                self.estimate = Some(f.dock_pose);
                self.unseen_for = 0.0;
                let c = f.dock_pose.translation();
                self.last_seen = if c.y >= 0.0 { Side::Left } else { Side::Right };
            }
            None => {
                self.estimate = self.estimate.map(|e| odo_delta.inverse().compose(&e));
                self.unseen_for += dt;
            }
        }
        if self.phase == DockingPhase::Searching {
            if fix.is_some() {
                self.search_for = 0.0;
                self.set_phase(DockingPhase::ApproachRunway, &mut events);
            } else {
                self.search_for += dt;
                if self.search_for > self.config.t_search {
                    self.set_phase(DockingPhase::Failed, &mut events);
                    events.push(DockingEvent::Failed);
                    return (Command::STOP, events);
                }
                let w = match self.last_seen {
                    Side::Left => self.config.search_rate,
                    Side::Right => -self.config.search_rate,
                };
                return (Command::new(0.0, w), events);
            }
        }
        let Some(est) = self.estimate.filter(|_| self.unseen_for <= self.config.t_unseen) else {
            self.search_for = 0.0;
            self.set_phase(DockingPhase::Searching, &mut events);
            let w = match self.last_seen {
                Side::Left => self.config.search_rate,
                Side::Right => -self.config.search_rate,
            };
            return (Command::new(0.0, w), events);
        };
        let robot = est.inverse();
        let p = robot.translation();
        let (start, end) = self.model.runway;
        let u = (end - start).scale(1.0 / start.distance(end));
        let s = (p - start).dot(u);
        let lateral = u.cross(p - start);
        let runway_heading = u.angle();
        let cfg = self.config;

        if self.phase == DockingPhase::RunwayTrack && lateral.abs() > 2.0 * cfg.d_runway {
            self.set_phase(DockingPhase::ApproachRunway, &mut events);
        }
        if self.phase == DockingPhase::ApproachRunway && lateral.abs() <= cfg.d_runway {
            self.set_phase(DockingPhase::Align, &mut events);
        }
        if self.phase == DockingPhase::Align && angle_diff(robot.theta, runway_heading).abs() < cfg.align_tolerance {
            self.set_phase(DockingPhase::RunwayTrack, &mut events);
        }
        let cmd = match self.phase {
            DockingPhase::ApproachRunway => {
                let target = if s < 0.0 { start } else { start + u.scale((s + 0.3).min(start.distance(end))) };
                let beta = angle_diff((target - p).angle(), robot.theta);
                if beta.abs() > 0.5 {
                    Command::new(0.0, cfg.turn_rate.copysign(beta))
                } else {
                    Command::new(cfg.approach_speed, (2.0 * beta).clamp(-cfg.turn_rate, cfg.turn_rate))
                }
            }
            DockingPhase::Align => {
                let err = angle_diff(robot.theta, runway_heading);
                Command::new(0.0, (-2.0 * err).clamp(-cfg.turn_rate, cfg.turn_rate))
            }
            DockingPhase::RunwayTrack => {
                let remaining = (end - p).dot(u);
                let target = start + u.scale(s + cfg.runway_lookahead);
                let alpha = angle_diff((target - p).angle(), robot.theta);
                let w = self.heading.update(alpha, dt);
                let v = self.speed.update(remaining, dt);
                if p.distance(end) < cfg.d_docked && v.abs() < cfg.v_docked {
                    self.set_phase(DockingPhase::Docked, &mut events);
                    Command::STOP
                } else {
                    Command::new(v, w)
                }
            }
            _ => Command::STOP,
        };
        (cmd, events)
    }
}
