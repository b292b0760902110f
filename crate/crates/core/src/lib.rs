//! Teach-and-repeat navigation over an experience graph, with supergraph
//! mission planning, a LiDAR safety curtain and autonomous docking, all
//! exercised against a simulated grassland whose appearance decays.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod docking;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod localisation;
pub mod mission;
pub mod runtime;
pub mod safety;
pub mod sim;
pub mod teach_repeat;

pub use error::ConfigError;
pub use geometry::{Point2, Pose2};
