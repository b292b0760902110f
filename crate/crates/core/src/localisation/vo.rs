//! Simulated visual odometry: true frame-to-frame motion plus noise scaled
//! by the motion magnitude.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoNoise {
    /// Per-axis translation sigma per metre travelled.
    pub translation_per_m: f64,
    /// Heading sigma per radian turned.
    pub rotation_per_rad: f64,
    /// Heading sigma per metre travelled.
    pub rotation_per_m: f64,
}

impl Default for VoNoise {
    fn default() -> Self {
        Self {
            translation_per_m: 0.02,
            rotation_per_rad: 0.02,
            rotation_per_m: 0.005,
        }
    }
}

impl VoNoise {
    pub const ZERO: VoNoise = VoNoise {
        translation_per_m: 0.0,
        rotation_per_rad: 0.0,
        rotation_per_m: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoEstimate {
    pub delta: Pose2,
    /// Fold of deltas since the last accepted fix.
    pub cumulative: Pose2,
}

/// One noisy VO increment. Three normals are drawn on every call.
pub fn vo_delta<R: Rng + ?Sized>(true_delta: &Pose2, noise: &VoNoise, rng: &mut R) -> Pose2 {
    let dist = true_delta.translation().norm();
    let st = noise.translation_per_m * dist;
    let sr = noise.rotation_per_rad * true_delta.theta.abs() + noise.rotation_per_m * dist;
    let (nx, ny, nt): (f64, f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
    Pose2::new(true_delta.x + st * nx, true_delta.y + st * ny, true_delta.theta + sr * nt)
}

/// Accumulating odometry source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Odometry {
    pub noise: VoNoise,
    cumulative: Pose2,
}

impl Odometry {
    pub fn new(noise: VoNoise) -> Self {
        Self {
            noise,
            cumulative: Pose2::IDENTITY,
        }
    }

    /// `vo_step` with the observation pair abstracted away: only the true
    /// motion between the two frames matters to the noise law.
    pub fn step<R: Rng + ?Sized>(&mut self, true_delta: &Pose2, rng: &mut R) -> VoEstimate {
        let delta = vo_delta(true_delta, &self.noise, rng);
        self.cumulative = self.cumulative.compose(&delta);
        VoEstimate {
            delta,
            cumulative: self.cumulative,
        }
    }

    /// Called when a fix is accepted.
    pub fn reset(&mut self) {
        self.cumulative = Pose2::IDENTITY;
    }

    pub fn cumulative(&self) -> Pose2 {
        self.cumulative
    }
}
