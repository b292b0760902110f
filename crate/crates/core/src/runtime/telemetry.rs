//! Newline-delimited JSON log: one header line, then tick records and events
//! in stamp order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::docking::DockingPhase;
use crate::geometry::Pose2;
use crate::graph::ExperienceId;
use crate::mission::{MissionStatus, TraversalOutcome};

pub const SCHEMA: &str = "fieldnav.telemetry";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    Teach,
    Repeat,
    Docking,
    Charging,
    Teleop,
}

impl Mode {
    pub fn is_autonomous(self) -> bool {
        self == Mode::Repeat
    }
}

/// Aggregate over `ticks` consecutive control ticks in one mode, stamped at
/// the last of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub stamp: f64,
    /// Appearance clock, seconds.
    pub calendar: f64,
    pub ticks: u32,
    pub mode: Mode,
    pub pose: Pose2,
    /// Localiser estimate in the site frame.
    pub estimate: Option<Pose2>,
    pub inliers: u32,
    pub lost: bool,
    pub speed_limit: f64,
    pub estop: bool,
    pub battery: f64,
    pub odometer: f64,
    /// Seconds and metres driven in REPEAT during the period.
    pub autonomous_s: f64,
    pub autonomous_m: f64,
    pub mission: Option<String>,
    pub edge: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    ModeChanged {
        from: Mode,
        to: Mode,
    },
    DriveAcquired {
        client: String,
    },
    DriveReleased {
        client: String,
    },
    TeachStarted {
        experience: ExperienceId,
        from: Option<String>,
    },
    TeachFinished {
        experience: ExperienceId,
        keyframes: usize,
        length: f64,
        from: Option<String>,
        to: Option<String>,
        edge: Option<String>,
        reteach: bool,
    },
    TeachDiscarded {
        experience: ExperienceId,
    },
    Reteach {
        edge: String,
        loss_rate: f64,
        mean_inliers: f64,
        old_experience: ExperienceId,
        new_experience: ExperienceId,
    },
    MissionPlanned {
        mission: String,
        targets: Vec<String>,
        tour: Vec<String>,
        length: f64,
    },
    MissionStatus {
        mission: String,
        status: MissionStatus,
    },
    TraversalStarted {
        mission: Option<String>,
        edge: String,
        from: String,
        to: String,
        experience: ExperienceId,
    },
    TraversalFinished {
        mission: Option<String>,
        edge: String,
        from: String,
        to: String,
        experience: ExperienceId,
        t_start: f64,
        t_end: f64,
        outcome: TraversalOutcome,
        distance: f64,
        ticks: u32,
        failed_ticks: u32,
        inlier_sum: u64,
        lost_events: u32,
    },
    Capture {
        mission: String,
        target: String,
    },
    ReturnToDock {
        mission: String,
    },
    Localised {
        keyframe: u32,
        inliers: usize,
    },
    LocalisationInitFailed {
        reason: String,
    },
    LocalisationLost,
    Reseeded,
    Estop {
        active: bool,
    },
    DockingPhase {
        phase: DockingPhase,
    },
    DockingFailed,
    ChargingStarted,
    ChargingFinished,
    BatteryEmpty,
    OperatorCarry {
        to: Pose2,
    },
    Warning {
        message: String,
    },
}

impl Event {
    pub fn tag(&self) -> &'static str {
        match self {
            Event::ModeChanged { .. } => "mode_changed",
            Event::DriveAcquired { .. } => "drive_acquired",
            Event::DriveReleased { .. } => "drive_released",
            Event::TeachStarted { .. } => "teach_started",
            Event::TeachFinished { .. } => "teach_finished",
            Event::TeachDiscarded { .. } => "teach_discarded",
            Event::Reteach { .. } => "reteach",
            Event::MissionPlanned { .. } => "mission_planned",
            Event::MissionStatus { .. } => "mission_status",
            Event::TraversalStarted { .. } => "traversal_started",
            Event::TraversalFinished { .. } => "traversal_finished",
            Event::Capture { .. } => "capture",
            Event::ReturnToDock { .. } => "return_to_dock",
            Event::Localised { .. } => "localised",
            Event::LocalisationInitFailed { .. } => "localisation_init_failed",
            Event::LocalisationLost => "localisation_lost",
            Event::Reseeded => "reseeded",
            Event::Estop { .. } => "estop",
            Event::DockingPhase { .. } => "docking_phase",
            Event::DockingFailed => "docking_failed",
            Event::ChargingStarted => "charging_started",
            Event::ChargingFinished => "charging_finished",
            Event::BatteryEmpty => "battery_empty",
            Event::OperatorCarry { .. } => "operator_carry",
            Event::Warning { .. } => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub stamp: f64,
    pub calendar: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(Header),
    Tick(TelemetryRecord),
    Event(EventRecord),
}

impl LogLine {
    pub fn stamp(&self) -> Option<f64> {
        match self {
            LogLine::Header(_) => None,
            LogLine::Tick(r) => Some(r.stamp),
            LogLine::Event(e) => Some(e.stamp),
        }
    }
}

/// Single appender. The header is written lazily with the first line so a
/// run with no ticks leaves an empty log.
pub struct TelemetryWriter {
    out: Box<dyn Write + Send>,
    header: Option<Header>,
    lines: u64,
}

impl TelemetryWriter {
    pub fn new(out: Box<dyn Write + Send>, header: Header) -> Self {
        Self {
            out,
            header: Some(header),
            lines: 0,
        }
    }

    pub fn sink() -> Self {
        Self {
            out: Box::new(io::sink()),
            header: None,
            lines: 0,
        }
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn write(&mut self, line: &LogLine) -> io::Result<()> {
        if let Some(h) = self.header.take() {
            self.emit(&LogLine::Header(h))?;
        }
        self.emit(line)
    }

    fn emit(&mut self, line: &LogLine) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.lines += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl std::fmt::Debug for TelemetryWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TelemetryWriter").field("lines", &self.lines).finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: stamp {stamp} precedes {previous}")]
    OutOfOrder { line: usize, stamp: f64, previous: f64 },
    #[error("line {line}: unsupported schema {schema} v{version}")]
    Schema { line: usize, schema: String, version: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parse and order-check a whole log.
pub fn parse_log(text: &str) -> Result<Vec<LogLine>, LogError> {
    let mut out = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: LogLine = serde_json::from_str(raw).map_err(|source| LogError::Parse { line: i + 1, source })?;
        if let LogLine::Header(h) = &line {
            if h.schema != SCHEMA || h.version != SCHEMA_VERSION {
                return Err(LogError::Schema {
                    line: i + 1,
                    schema: h.schema.clone(),
                    version: h.version,
                });
            }
        }
        if let Some(s) = line.stamp() {
            if s < previous {
                return Err(LogError::OutOfOrder {
                    line: i + 1,
                    stamp: s,
                    previous,
                });
            }
            previous = s;
        }
        out.push(line);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn header() -> Header {
        Header {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            scenario: "t".into(),
            seed: 1,
            accel: 1.0,
        }
    }

    #[test]
    fn round_trip_and_lazy_header() {
        let buf = Shared::default();
        let mut w = TelemetryWriter::new(Box::new(buf.clone()), header());
        assert!(buf.0.lock().unwrap().is_empty());
        let ev = LogLine::Event(EventRecord {
            stamp: 0.1,
            calendar: 10.0,
            event: Event::ModeChanged { from: Mode::Idle, to: Mode::Teach },
        });
        w.write(&ev).unwrap();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines = parse_log(&text).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], ev);
        assert!(text.lines().nth(1).unwrap().contains("\"kind\":\"mode_changed\""));
    }

    #[test]
    fn out_of_order_is_rejected() {
        let a = r#"{"type":"event","stamp":2.0,"calendar":0.0,"kind":"reseeded"}"#;
        let b = r#"{"type":"event","stamp":1.0,"calendar":0.0,"kind":"reseeded"}"#;
        let err = parse_log(&format!("{a}\n{b}\n")).unwrap_err();
        assert!(matches!(err, LogError::OutOfOrder { line: 2, .. }));
    }
}
