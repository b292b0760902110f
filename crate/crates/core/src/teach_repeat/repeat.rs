//! Repeat phase: track a taught path with one of two steering laws.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Pose2};
use crate::sim::Command;

use super::path::RepeatPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControllerKind {
    /// Steer to the path tangent only; lateral error is never corrected.
    HeadingOnly,
    PurePursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepeatConfig {
    pub controller: ControllerKind,
    pub heading_gain: f64,
    /// Arc length from the projection to the pursuit target.
    pub lookahead: f64,
    pub v_nominal: f64,
    /// Rate used when turning in place.
    pub turn_rate: f64,
    pub goal_tolerance: f64,
    /// Seconds of LOST before the traversal aborts.
    pub abort_after: f64,
    /// Keyframes either side of the last projection searched.
    pub window: usize,
    pub sample_spacing: f64,
}

impl Default for RepeatConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::PurePursuit,
            heading_gain: 1.5,
            lookahead: 0.8,
            v_nominal: 0.8,
            turn_rate: 1.0,
            goal_tolerance: 0.15,
            abort_after: 30.0,
            window: 5,
            sample_spacing: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RepeatState {
    Following,
    Lost,
    Aborted,
    Completed,
}

impl RepeatState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RepeatState::Aborted | RepeatState::Completed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatStatus {
    pub state: RepeatState,
    /// Signed; positive when the robot is left of the path.
    pub cross_track: f64,
    pub along_track: f64,
    pub heading_error: f64,
    /// Keyframe segment the robot projects onto, in travel order.
    pub segment: usize,
}

#[derive(Debug, Clone)]
pub struct RepeatController {
    pub config: RepeatConfig,
    path: RepeatPath,
    status: RepeatStatus,
    lost_for: f64,
}

impl RepeatController {
    pub fn new(config: RepeatConfig, poses: &[Pose2], reversed: bool) -> Self {
        let path = RepeatPath::new(poses, reversed, config.sample_spacing, config.lookahead + 0.5);
        let state = if path.is_degenerate() { RepeatState::Completed } else { RepeatState::Following };
        Self {
            config,
            path,
            status: RepeatStatus {
                state,
                cross_track: 0.0,
                along_track: 0.0,
                heading_error: 0.0,
                segment: 0,
            },
            lost_for: 0.0,
        }
    }

    pub fn path(&self) -> &RepeatPath {
        &self.path
    }

    pub fn status(&self) -> &RepeatStatus {
        &self.status
    }

    /// `pose` is the localised pose in the experience frame, `None` while
    /// awaiting a first fix. `lost` mirrors the localiser's LOST flag.
    pub fn tick(&mut self, pose: Option<Pose2>, lost: bool, speed_limit: f64, dt: f64) -> (Command, RepeatStatus) {
        if self.status.state.is_terminal() {
            return (Command::STOP, self.status);
        }
        if lost {
            self.status.state = RepeatState::Lost;
            self.lost_for += dt;
            if self.lost_for >= self.config.abort_after - 1e-9 {
                self.status.state = RepeatState::Aborted;
            }
            return (Command::STOP, self.status);
        }
        let Some(pose) = pose else {
            return (Command::STOP, self.status);
        };
        self.lost_for = 0.0;
        self.status.state = RepeatState::Following;
        let p = pose.translation();
        let pr = self.path.project(p, self.status.segment, self.config.window);
        let off = p - pr.point;
        let tangent_dir = crate::geometry::Point2::from_polar(1.0, pr.tangent);
        self.status.cross_track = off.norm().copysign(tangent_dir.cross(off));
        self.status.along_track = pr.s;
        self.status.heading_error = angle_diff(pose.theta, pr.tangent);
        self.status.segment = pr.keyframe_segment;
        if pr.s >= self.path.length() - self.config.goal_tolerance {
            self.status.state = RepeatState::Completed;
            return (Command::STOP, self.status);
        }
        let v = self.config.v_nominal.min(speed_limit.max(0.0));
        let cmd = match self.config.controller {
            ControllerKind::HeadingOnly => {
                let e = self.status.heading_error;
                if e.abs() > std::f64::consts::FRAC_PI_2 {
                    Command::new(0.0, -self.config.turn_rate.copysign(e))
                } else {
                    Command::new(v, -self.config.heading_gain * e)
                }
            }
            ControllerKind::PurePursuit => {
                let target = self.path.point_at(pr.s + self.config.lookahead);
                let local = pose.inverse_transform_point(target);
                let alpha = local.angle();
                if alpha.abs() > std::f64::consts::FRAC_PI_2 {
                    Command::new(0.0, self.config.turn_rate.copysign(alpha))
                } else {
                    Command::new(v, 2.0 * v * alpha.sin() / self.config.lookahead)
                }
            }
        };
        (cmd, self.status)
    }
}
