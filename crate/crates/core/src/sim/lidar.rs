//! Planar scanning LiDAR by ray casting.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Pose2};
use crate::sim::world::WorldMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub fov: f64,
    pub resolution: f64,
    pub max_range: f64,
    pub range_sigma: f64,
    /// Per-beam chance of a return off a stray grass blade.
    pub grass_return_probability: f64,
    /// Spurious returns land uniformly in this range band.
    pub grass_range: [f64; 2],
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            fov: 1.5 * PI,
            resolution: 0.5_f64.to_radians(),
            max_range: 10.0,
            range_sigma: 0.005,
            grass_return_probability: 0.0,
            grass_range: [0.2, 2.0],
        }
    }
}

impl LidarConfig {
    pub fn noiseless(mut self) -> Self {
        self.range_sigma = 0.0;
        self.grass_return_probability = 0.0;
        self
    }

    pub fn beam_count(&self) -> usize {
        (self.fov / self.resolution).round() as usize + 1
    }

    pub fn angles(&self) -> Vec<f64> {
        let n = self.beam_count();
        let start = -self.fov / 2.0;
        (0..n).map(|i| start + i as f64 * self.resolution).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub timestamp: f64,
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    /// Beam endpoints in the sensor frame, skipping max-range returns.
    pub fn points(&self) -> Vec<(usize, Point2)> {
        self.angles
            .iter()
            .zip(&self.ranges)
            .enumerate()
            .filter(|(_, (_, &r))| r < self.max_range)
            .map(|(i, (&a, &r))| (i, Point2::from_polar(r, a)))
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.angles.len() == self.ranges.len()
            && self.angles.windows(2).all(|w| w[1] > w[0])
            && self.ranges.iter().all(|&r| r > 0.0 && r <= self.max_range)
    }
}

/// Distance along a unit ray to a segment, if hit.
pub fn ray_segment(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = a - origin;
    let s = ao.cross(e) / denom;
    let u = ao.cross(dir) / denom;
    (s > 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(s)
}

/// Distance along a unit ray to the first crossing of a circle, if hit.
pub fn ray_circle(origin: Point2, dir: Point2, centre: Point2, radius: f64) -> Option<f64> {
    let oc = origin - centre;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let s0 = -b - sq;
    let s1 = -b + sq;
    if s0 > 1e-9 {
        Some(s0)
    } else if s1 > 1e-9 {
        Some(s1)
    } else {
        None
    }
}

/// Ranges from beams cast against the world, before noise.
pub fn cast(
    cfg: &LidarConfig,
    angles: &[f64],
    segments: &[(Point2, Point2)],
    discs: &[(Point2, f64)],
    pose: &Pose2,
) -> Vec<f64> {
    let origin = pose.translation();
    // Only geometry that can be hit within range is tested per beam.
    let reach = cfg.max_range;
    let near_segs: Vec<&(Point2, Point2)> = segments
        .iter()
        .filter(|(a, b)| crate::geometry::point_segment_distance(origin, *a, *b) <= reach)
        .collect();
    let near_discs: Vec<&(Point2, f64)> = discs
        .iter()
        .filter(|(c, r)| c.distance(origin) - r <= reach)
        .collect();
    angles
        .iter()
        .map(|&a| {
            let th = pose.theta + a;
            let dir = Point2::new(th.cos(), th.sin());
            let mut best = cfg.max_range;
            for (p, q) in &near_segs {
                if let Some(s) = ray_segment(origin, dir, *p, *q) {
                    best = best.min(s);
                }
            }
            for (c, r) in &near_discs {
                if let Some(s) = ray_circle(origin, dir, *c, *r) {
                    best = best.min(s);
                }
            }
            best
        })
        .collect()
}

pub fn sense_lidar<R: Rng + ?Sized>(
    cfg: &LidarConfig,
    world: &WorldMap,
    pose: &Pose2,
    t: f64,
    rng: &mut R,
) -> LidarScan {
    let angles = cfg.angles();
    let discs: Vec<(Point2, f64)> = world
        .agents
        .iter()
        .map(|a| (a.position_at(t), a.radius))
        .collect();
    let mut ranges = cast(cfg, &angles, world.static_segments(), &discs, pose);
    for r in ranges.iter_mut() {
        if *r < cfg.max_range && cfg.range_sigma > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            *r = (*r + cfg.range_sigma * n).clamp(1e-3, cfg.max_range);
        }
        if cfg.grass_return_probability > 0.0 && rng.random::<f64>() < cfg.grass_return_probability {
            let g = rng.random_range(cfg.grass_range[0]..cfg.grass_range[1]);
            *r = r.min(g);
        }
    }
    LidarScan {
        timestamp: t,
        angles,
        ranges,
        max_range: cfg.max_range,
    }
}
