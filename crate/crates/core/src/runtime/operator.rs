//! Scripted human operator: drives a site track by eye (ground truth), the
//! way a person with a joystick would during teaching.

use crate::geometry::{angle_diff, project_onto_segment, Point2, Pose2};
use crate::sim::Command;

use super::scenario::OperatorConfig;

#[derive(Debug, Clone)]
pub struct OperatorDriver {
    config: OperatorConfig,
    points: Vec<Point2>,
    /// Cumulative arc length at each vertex.
    arc: Vec<f64>,
    segment: usize,
}

impl OperatorDriver {
    pub fn new(config: OperatorConfig, points: Vec<Point2>) -> Self {
        let mut arc = vec![0.0];
        for w in points.windows(2) {
            arc.push(arc.last().copied().unwrap_or(0.0) + w[0].distance(w[1]));
        }
        Self {
            config,
            points,
            arc,
            segment: 0,
        }
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    /// Heading of the first track segment.
    pub fn initial_heading(&self) -> f64 {
        match self.points.as_slice() {
            [a, b, ..] => (*b - *a).angle(),
            _ => 0.0,
        }
    }

    fn point_at(&self, s: f64) -> Point2 {
        let s = s.clamp(0.0, self.length());
        let i = self.arc.partition_point(|&a| a <= s).clamp(1, self.points.len() - 1);
        let span = self.arc[i] - self.arc[i - 1];
        let u = if span > 0.0 { (s - self.arc[i - 1]) / span } else { 1.0 };
        self.points[i - 1].lerp(self.points[i], u)
    }

    /// Returns `None` once the end of the track is reached.
    pub fn command(&mut self, pose: &Pose2) -> Option<Command> {
        if self.points.len() < 2 {
            return None;
        }
        let p = pose.translation();
        // Advance monotonically so a track that doubles back is followed in order.
        let mut best = (self.segment, f64::INFINITY, 0.0);
        for i in self.segment..(self.segment + 3).min(self.points.len() - 1) {
            let (q, t) = project_onto_segment(p, self.points[i], self.points[i + 1]);
            let d = q.distance(p);
            if d < best.1 - 1e-12 {
                best = (i, d, t);
            }
        }
        self.segment = best.0;
        let s = self.arc[best.0] + best.2 * (self.arc[best.0 + 1] - self.arc[best.0]);
        let end = self.points[self.points.len() - 1];
        let remaining = self.length() - s;
        if remaining <= self.config.stop_radius || p.distance(end) <= self.config.stop_radius {
            return None;
        }
        let target = self.point_at(s + self.config.lookahead);
        let alpha = angle_diff((target - p).angle(), pose.theta);
        if alpha.abs() > 0.6 {
            return Some(Command::new(0.0, 1.0f64.copysign(alpha)));
        }
        let v = self.config.speed.min(0.3 + remaining);
        let l = p.distance(target).max(1e-3);
        Some(Command::new(v, 2.0 * v * alpha.sin() / l))
    }
}
