//! Supergraph over plot sites, routing, tours and mission execution.

pub mod executor;
pub mod reteach;
pub mod routing;
pub mod supergraph;
pub mod tsp;

pub use executor::{
    CaptureEvent, Directive, Mission, MissionConfig, MissionError, MissionRunner, MissionStatus, NavReport, ResumeBookmark, Step,
    TraversalOutcome, TraversalRecord,
};
pub use reteach::{recommend_reteach, EdgeScore, ReteachConfig, TraversalSample};
pub use routing::{shortest_path, Route, RoutingError};
pub use supergraph::{ExperienceRef, SgEdge, SgNode, Supergraph, SupergraphError};
pub use tsp::{plan_tour, solve_open_tour, TourError};
