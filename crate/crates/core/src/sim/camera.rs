//! Abstract feature camera: noisy bearing/range/descriptor observations of
//! landmarks, each sensed with probability equal to its persistence.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Point2, Pose2};
use crate::sim::world::{normalise, WorldMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    /// Full field of view, radians.
    pub fov: f64,
    pub max_range: f64,
    pub bearing_sigma: f64,
    pub range_sigma: f64,
    /// Per-component sigma added before re-normalising.
    pub descriptor_sigma: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov: 2.0 * PI,
            max_range: 5.0,
            bearing_sigma: 0.003,
            range_sigma: 0.02,
            descriptor_sigma: 0.02,
        }
    }
}

impl CameraConfig {
    pub fn noiseless(mut self) -> Self {
        self.bearing_sigma = 0.0;
        self.range_sigma = 0.0;
        self.descriptor_sigma = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedFeature {
    /// Ground-truth id, for oracles only. Navigation code never reads it.
    pub landmark_id: u32,
    pub bearing: f64,
    pub range: f64,
    pub descriptor: Vec<f64>,
}

impl ObservedFeature {
    /// Position in the robot frame.
    pub fn point(&self) -> Point2 {
        Point2::from_polar(self.range, self.bearing)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraObservation {
    pub timestamp: f64,
    pub observed: Vec<ObservedFeature>,
}

impl CameraObservation {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }
}

/// Sense at motion time `stamp`; visibility is evaluated at the decay clock
/// `decay_t`.
pub fn sense_camera<R: Rng + ?Sized>(
    cfg: &CameraConfig,
    world: &WorldMap,
    pose: &Pose2,
    stamp: f64,
    decay_t: f64,
    rng: &mut R,
    scratch: &mut Vec<u32>,
) -> CameraObservation {
    let mut observed = Vec::new();
    world.landmarks_near(pose.translation(), cfg.max_range, scratch);
    let half_fov = cfg.fov / 2.0;
    for &idx in scratch.iter() {
        let lm = &world.landmarks[idx as usize];
        let local = pose.inverse_transform_point(lm.position);
        let range = local.norm();
        if range > cfg.max_range || range <= 1e-9 {
            continue;
        }
        let bearing = local.angle();
        if cfg.fov < 2.0 * PI && bearing.abs() > half_fov {
            continue;
        }
        let p = lm.visibility(decay_t);
        if p <= 0.0 || (p < 1.0 && rng.random::<f64>() >= p) {
            continue;
        }
        let mut descriptor = lm.descriptor.clone();
        if cfg.descriptor_sigma > 0.0 {
            for d in descriptor.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *d += cfg.descriptor_sigma * n;
            }
            normalise(&mut descriptor);
        }
        let (mut b, mut r) = (bearing, range);
        if cfg.bearing_sigma > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            b = normalize_angle(b + cfg.bearing_sigma * n);
        }
        if cfg.range_sigma > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            r = (r + cfg.range_sigma * n).max(1e-3);
        }
        observed.push(ObservedFeature {
            landmark_id: lm.id,
            bearing: b,
            range: r,
            descriptor,
        });
    }
    CameraObservation {
        timestamp: stamp,
        observed,
    }
}
