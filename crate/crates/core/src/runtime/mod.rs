//! Orchestration: the tick loop, telemetry, scenario files, statistics,
//! the console wire API and trace replay.

pub mod api;
pub mod director;
pub mod engine;
pub mod operator;
pub mod replay;
pub mod scenario;
pub mod stats;
pub mod telemetry;

pub use director::{run_scenario, Director, RunSummary};
pub use engine::{Engine, EngineError, MissionView, Snapshot, TeachSummary};
pub use scenario::{Action, CampaignConfig, Scenario, Start};
pub use stats::{aggregate, stats_from_text, CampaignReport, ReportBuilder, StatsConfig};
pub use telemetry::{parse_log, Event, EventRecord, LogLine, Mode, TelemetryRecord, TelemetryWriter};
