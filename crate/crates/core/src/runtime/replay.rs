//! Recorded traces: LiDAR scans for offline dock perception, and teleop
//! drive traces that replay a teach session. Both are NDJSON, one record per
//! line; drive samples carry the same fields as a teleop request.

use serde::{Deserialize, Serialize};

use crate::docking::{DockFix, DockModel, DockingConfig, DockingController};
use crate::sim::{DockLayout, LidarScan, DT};

use super::engine::{Engine, EngineError, TeachSummary};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: stamp {stamp} is earlier than {previous}")]
    OutOfOrder { line: usize, stamp: f64, previous: f64 },
}

/// One teleop setpoint, applied from motion time `t` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSample {
    pub t: f64,
    pub v: f64,
    pub w: f64,
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, stamp: impl Fn(&T) -> f64) -> Result<Vec<T>, TraceError> {
    let mut out: Vec<T> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(raw).map_err(|source| TraceError::Parse { line: i + 1, source })?;
        if let Some(prev) = out.last().map(&stamp) {
            if stamp(&rec) < prev {
                return Err(TraceError::OutOfOrder {
                    line: i + 1,
                    stamp: stamp(&rec),
                    previous: prev,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn to_lines<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|s| serde_json::to_string(s).expect("trace record serialises") + "\n")
        .collect()
}

pub fn read_scans(text: &str) -> Result<Vec<LidarScan>, TraceError> {
    parse_lines(text, |s: &LidarScan| s.timestamp)
}

pub fn write_scans(scans: &[LidarScan]) -> String {
    to_lines(scans)
}

pub fn read_drive(text: &str) -> Result<Vec<DriveSample>, TraceError> {
    parse_lines(text, |s: &DriveSample| s.t)
}

pub fn write_drive(samples: &[DriveSample]) -> String {
    to_lines(samples)
}

/// Run dock perception over each scan independently (no prior).
pub fn perceive_scans(scans: &[LidarScan], config: &DockingConfig, layout: &DockLayout) -> Vec<Option<DockFix>> {
    let controller = DockingController::new(*config, DockModel::from_layout(layout));
    scans.iter().map(|s| controller.perceive(s)).collect()
}

/// Client name a drive replay holds the lease under.
pub const REPLAY_CLIENT: &str = "replay";

/// Drive `samples` through the engine as a teach session from `from` to
/// `to`. Ticks until the last setpoint has timed out.
pub fn replay_teach(engine: &mut Engine, samples: &[DriveSample], from: Option<String>, to: Option<String>) -> Result<Option<TeachSummary>, EngineError> {
    engine.acquire_drive(REPLAY_CLIENT)?;
    engine.start_teach(REPLAY_CLIENT, from)?;
    let t0 = engine.t();
    let end = samples.last().map_or(0.0, |s| s.t) + engine.scenario.runtime.teleop_timeout + DT;
    let mut next = 0;
    while engine.t() - t0 < end - 1e-9 {
        while next < samples.len() && samples[next].t <= engine.t() - t0 + 1e-9 {
            let s = samples[next];
            engine.teleop(REPLAY_CLIENT, s.v, s.w)?;
            next += 1;
        }
        engine.tick()?;
    }
    let summary = engine.stop_teach(REPLAY_CLIENT, to)?;
    engine.release_drive(REPLAY_CLIENT)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drive_trace_round_trip_and_order() {
        let v = vec![DriveSample { t: 0.0, v: 0.5, w: 0.0 }, DriveSample { t: 1.0, v: 0.5, w: 0.1 }];
        assert_eq!(read_drive(&write_drive(&v)).unwrap(), v);
        let bad = "{\"t\":1.0,\"v\":0,\"w\":0}\n{\"t\":0.5,\"v\":0,\"w\":0}\n";
        assert!(matches!(read_drive(bad), Err(TraceError::OutOfOrder { line: 2, .. })));
        assert!(matches!(read_drive("{\"t\":1"), Err(TraceError::Parse { line: 1, .. })));
    }
}
