//! LiDAR safety curtain: group scan returns, keep groups big enough to be
//! real objects, and turn their positions into a speed limit or an e-stop.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_segment_distance, Point2};
use crate::sim::LidarScan;

/// Axis-aligned rectangle in the robot frame, x forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub ahead: f64,
    pub behind: f64,
    pub half_width: f64,
}

impl Zone {
    pub fn contains(&self, p: Point2, pad: f64) -> bool {
        p.x >= -self.behind - pad && p.x <= self.ahead + pad && p.y.abs() <= self.half_width + pad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    pub min_object_size: f64,
    pub max_internal_gap: f64,
    pub stop_zone: Zone,
    pub slow_zone: Zone,
    pub v_slow: f64,
    pub v_max: f64,
    /// Zones are grown by this much to absorb range noise at their edges.
    pub padding: f64,
    /// Returns this close to the dock model are ignored while docking.
    pub dock_exemption: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            min_object_size: 0.1,
            max_internal_gap: 0.15,
            stop_zone: Zone {
                ahead: 1.0,
                behind: 0.0,
                half_width: 0.4,
            },
            slow_zone: Zone {
                ahead: 2.5,
                behind: 0.0,
                half_width: 0.8,
            },
            v_slow: 0.3,
            v_max: 1.0,
            padding: 0.05,
            dock_exemption: 0.06,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCluster {
    pub id: u32,
    /// Robot-frame points in beam order.
    pub points: Vec<Point2>,
    pub beams: Vec<usize>,
    /// Largest distance between any two points.
    pub span: f64,
    pub nearest_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyDecision {
    pub speed_limit: f64,
    pub estop: bool,
    pub triggering: Vec<u32>,
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a - o).cross(b - o)
}

/// Diameter of a point set via its convex hull.
pub fn span(points: &[Point2]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() + 1);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.is_empty() {
        hull.push(pts[0]);
    }
    let mut best: f64 = 0.0;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max(a.distance(*b));
        }
    }
    // Degenerate hulls (collinear) keep just the extremes, which is exact.
    best.max(pts[0].distance(*pts.last().unwrap()))
}

/// Group angle-ordered points, splitting where consecutive points are more
/// than `max_gap` apart; keep groups spanning at least `min_size`.
pub fn cluster_points(points: &[(usize, Point2)], min_size: f64, max_gap: f64) -> Vec<ObstacleCluster> {
    let mut out = Vec::new();
    let mut start = 0;
    let flush = |lo: usize, hi: usize, out: &mut Vec<ObstacleCluster>| {
        let group = &points[lo..hi];
        let pts: Vec<Point2> = group.iter().map(|p| p.1).collect();
        let s = span(&pts);
        if s >= min_size {
            out.push(ObstacleCluster {
                id: out.len() as u32,
                nearest_range: pts.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min),
                beams: group.iter().map(|p| p.0).collect(),
                points: pts,
                span: s,
            });
        }
    };
    for i in 1..=points.len() {
        if i == points.len() || points[i].1.distance(points[i - 1].1) > max_gap {
            if i > start {
                flush(start, i, &mut out);
            }
            start = i;
        }
    }
    out
}

pub fn cluster_scan(scan: &LidarScan, min_size: f64, max_gap: f64) -> Vec<ObstacleCluster> {
    cluster_points(&scan.points(), min_size, max_gap)
}

/// Drop returns lying on any of the given robot-frame segments.
pub fn exempt_segments(points: Vec<(usize, Point2)>, segments: &[(Point2, Point2)], tol: f64) -> Vec<(usize, Point2)> {
    points
        .into_iter()
        .filter(|(_, p)| !segments.iter().any(|(a, b)| point_segment_distance(*p, *a, *b) <= tol))
        .collect()
}

pub fn decide(clusters: &[ObstacleCluster], cfg: &SafetyConfig) -> SafetyDecision {
    let mut stop = Vec::new();
    let mut slow = Vec::new();
    for c in clusters {
        if c.points.iter().any(|p| cfg.stop_zone.contains(*p, cfg.padding)) {
            stop.push(c.id);
        } else if c.points.iter().any(|p| cfg.slow_zone.contains(*p, cfg.padding)) {
            slow.push(c.id);
        }
    }
    if !stop.is_empty() {
        SafetyDecision {
            speed_limit: 0.0,
            estop: true,
            triggering: stop,
        }
    } else if !slow.is_empty() {
        SafetyDecision {
            speed_limit: cfg.v_slow,
            estop: false,
            triggering: slow,
        }
    } else {
        SafetyDecision {
            speed_limit: cfg.v_max,
            estop: false,
            triggering: Vec::new(),
        }
    }
}

/// Clamp any controller's command to the decision. Rotation in place is
/// still allowed under a speed limit, but not under e-stop.
pub fn clamp_command(cmd: crate::sim::Command, d: &SafetyDecision) -> crate::sim::Command {
    if d.estop {
        return crate::sim::Command::STOP;
    }
    let v = cmd.v.clamp(-d.speed_limit, d.speed_limit);
    crate::sim::Command::new(v, cmd.w)
}
