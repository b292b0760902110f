//! Coarse-to-fine localisation against the experience graph.

pub mod coarse;
pub mod fine;
pub mod localiser;
pub mod vo;

pub use coarse::{coarse_localise, coarse_localise_filtered, Seed};
pub use fine::{fine_localise, live_features, FineConfig, LiveFeature, LocalisationFailure, LocalisationFix};
pub use localiser::{Localiser, LocaliserConfig, LocaliserError, TickOutput};
pub use vo::{vo_delta, Odometry, VoEstimate, VoNoise};
