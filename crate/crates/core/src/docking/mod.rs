//! LiDAR dock detection and the runway docking controller.

pub mod controller;
pub mod matching;
pub mod segments;

pub use controller::{DockingConfig, DockingController, DockingEvent, DockingPhase, Pid, PidGains, Side};
pub use matching::{match_dock, DockFix, DockModel, MatchConfig};
pub use segments::{extract_segments, fit_tls, ExtractConfig, LineSegment};
