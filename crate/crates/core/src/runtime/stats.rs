//! Log aggregation: autonomy per calendar bucket, runs with the display
//! flags, per-edge outcomes and re-teach bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mission::{MissionRunner, TraversalOutcome, TraversalRecord};

use super::telemetry::{parse_log, Event, LogError, LogLine};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Calendar seconds per bucket.
    pub bucket: f64,
    /// Runs shorter than this are flagged short, seconds.
    pub short_run: f64,
    /// Runs covering less than this are flagged aborted, metres.
    pub aborted_run: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            bucket: 86_400.0,
            short_run: 900.0,
            aborted_run: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub bucket: i64,
    pub t_start: f64,
    pub t_end: f64,
    pub duration: f64,
    pub metres: f64,
    pub short: bool,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketEntry {
    pub bucket: i64,
    pub autonomous_s: f64,
    pub metres: f64,
    /// Cumulative autonomous metres at the end of the bucket.
    pub cumulative_m: f64,
    pub runs: u32,
    pub short_runs: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeOutcomes {
    pub completed: u32,
    pub aborted: u32,
    pub metres: f64,
    pub reteaches: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReteachEntry {
    pub stamp: f64,
    pub calendar: f64,
    pub edge: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CampaignReport {
    pub ticks: u64,
    pub autonomous_s: f64,
    pub autonomous_m: f64,
    pub buckets: Vec<BucketEntry>,
    pub runs: Vec<RunEntry>,
    pub edges: BTreeMap<String, EdgeOutcomes>,
    pub traversal_m: f64,
    pub reteaches: Vec<ReteachEntry>,
    pub taught_edges: usize,
    pub retaught_edges: usize,
    pub never_retaught_fraction: f64,
    pub missions: u32,
    pub captures: u32,
    pub lost_events: u32,
    pub traversals: Vec<TraversalRecord>,
}

/// Incremental aggregation over log lines in order.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    config: StatsConfig,
    report: CampaignReport,
    buckets: BTreeMap<i64, BucketEntry>,
    open: Option<RunEntry>,
    taught: BTreeSet<String>,
    retaught: BTreeSet<String>,
}

impl ReportBuilder {
    pub fn new(config: StatsConfig) -> Self {
        Self {
            config,
            report: CampaignReport::default(),
            buckets: BTreeMap::new(),
            open: None,
            taught: BTreeSet::new(),
            retaught: BTreeSet::new(),
        }
    }

    fn bucket_of(&self, calendar: f64) -> i64 {
        (calendar / self.config.bucket).floor() as i64
    }

    fn close_run(&mut self) {
        if let Some(mut run) = self.open.take() {
            run.short = run.duration < self.config.short_run;
            run.aborted = run.metres < self.config.aborted_run;
            let b = self.buckets.entry(run.bucket).or_insert_with(|| BucketEntry {
                bucket: run.bucket,
                ..Default::default()
            });
            b.runs += 1;
            b.short_runs += u32::from(run.short);
            self.report.runs.push(run);
        }
    }

    pub fn push(&mut self, line: &LogLine) {
        match line {
            LogLine::Header(_) => {}
            LogLine::Tick(r) => {
                self.report.ticks += r.ticks as u64;
                let bucket = self.bucket_of(r.calendar);
                let b = self.buckets.entry(bucket).or_insert_with(|| BucketEntry {
                    bucket,
                    ..Default::default()
                });
                b.autonomous_s += r.autonomous_s;
                b.metres += r.autonomous_m;
                self.report.autonomous_s += r.autonomous_s;
                self.report.autonomous_m += r.autonomous_m;
                if r.autonomous_s > 0.0 {
                    let period = r.ticks as f64 * crate::sim::DT;
                    let run = self.open.get_or_insert(RunEntry {
                        bucket,
                        t_start: r.stamp - period,
                        t_end: r.stamp,
                        duration: 0.0,
                        metres: 0.0,
                        short: false,
                        aborted: false,
                    });
                    run.t_end = r.stamp;
                    run.duration += r.autonomous_s;
                    run.metres += r.autonomous_m;
                } else {
                    self.close_run();
                }
            }
            LogLine::Event(e) => match &e.event {
                Event::TraversalFinished {
                    mission,
                    edge,
                    from,
                    to,
                    t_start,
                    t_end,
                    outcome,
                    distance,
                    lost_events,
                    ..
                } => {
                    let o = self.report.edges.entry(edge.clone()).or_default();
                    match outcome {
                        TraversalOutcome::Completed => o.completed += 1,
                        TraversalOutcome::Aborted => o.aborted += 1,
                    }
                    o.metres += distance;
                    self.report.traversal_m += distance;
                    self.report.lost_events += lost_events;
                    self.report.traversals.push(TraversalRecord {
                        mission: mission.clone().unwrap_or_else(|| "-".into()),
                        edge: edge.clone(),
                        from: from.clone(),
                        to: to.clone(),
                        t_start: *t_start,
                        t_end: *t_end,
                        outcome: *outcome,
                    });
                }
                Event::TeachFinished {
                    edge: Some(edge),
                    reteach: false,
                    ..
                } => {
                    self.taught.insert(edge.clone());
                }
                Event::Reteach { edge, .. } => {
                    self.retaught.insert(edge.clone());
                    self.report.edges.entry(edge.clone()).or_default().reteaches += 1;
                    self.report.reteaches.push(ReteachEntry {
                        stamp: e.stamp,
                        calendar: e.calendar,
                        edge: edge.clone(),
                    });
                }
                Event::MissionPlanned { .. } => self.report.missions += 1,
                Event::Capture { .. } => self.report.captures += 1,
                _ => {}
            },
        }
    }

    pub fn report(&self) -> CampaignReport {
        let mut b = self.clone();
        b.close_run();
        let mut r = b.report;
        let mut cum = 0.0;
        r.buckets = b
            .buckets
            .into_values()
            .map(|mut e| {
                cum += e.metres;
                e.cumulative_m = cum;
                e
            })
            .collect();
        r.taught_edges = b.taught.len();
        r.retaught_edges = b.taught.intersection(&b.retaught).count();
        r.never_retaught_fraction = if r.taught_edges == 0 {
            0.0
        } else {
            (r.taught_edges - r.retaught_edges) as f64 / r.taught_edges as f64
        };
        r
    }
}

pub fn aggregate(lines: &[LogLine], config: StatsConfig) -> CampaignReport {
    let mut b = ReportBuilder::new(config);
    lines.iter().for_each(|l| b.push(l));
    b.report()
}

pub fn stats_from_text(text: &str, config: StatsConfig) -> Result<CampaignReport, LogError> {
    Ok(aggregate(&parse_log(text)?, config))
}

impl CampaignReport {
    pub fn buckets_csv(&self) -> String {
        let mut s = String::from("bucket,autonomous_s,metres,cumulative_m,runs,short_runs\n");
        for b in &self.buckets {
            let _ = writeln!(s, "{},{:.1},{:.3},{:.3},{},{}", b.bucket, b.autonomous_s, b.metres, b.cumulative_m, b.runs, b.short_runs);
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("bucket,t_start,t_end,duration_s,metres,short,aborted\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{:.1},{:.1},{:.1},{:.3},{},{}",
                r.bucket, r.t_start, r.t_end, r.duration, r.metres, r.short, r.aborted
            );
        }
        s
    }

    pub fn edges_csv(&self) -> String {
        let mut s = String::from("edge,completed,aborted,metres,reteaches\n");
        for (k, e) in &self.edges {
            let _ = writeln!(s, "{k},{},{},{:.3},{}", e.completed, e.aborted, e.metres, e.reteaches);
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        MissionRunner::timing_csv(&self.traversals)
    }

    /// Write every table into `dir`.
    pub fn export(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("autonomy_by_day.csv"), self.buckets_csv())?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("edges.csv"), self.edges_csv())?;
        std::fs::write(dir.join("timing.csv"), self.timing_csv())?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).expect("report serialises"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::runtime::telemetry::{Mode, TelemetryRecord};

    pub(crate) fn tick(stamp: f64, calendar: f64, ticks: u32, auto: bool, metres: f64) -> LogLine {
        LogLine::Tick(TelemetryRecord {
            stamp,
            calendar,
            ticks,
            mode: if auto { Mode::Repeat } else { Mode::Idle },
            pose: Pose2::IDENTITY,
            estimate: None,
            inliers: 0,
            lost: false,
            speed_limit: 1.0,
            estop: false,
            battery: 1.0,
            odometer: 0.0,
            autonomous_s: if auto { ticks as f64 * 0.1 } else { 0.0 },
            autonomous_m: metres,
            mission: None,
            edge: None,
            tags: Vec::new(),
        })
    }

    /// A run of `secs` seconds in 10-tick records starting at `t0`.
    fn run(t0: f64, secs: u32, auto: bool) -> Vec<LogLine> {
        (1..=secs).map(|i| tick(t0 + i as f64, t0 + i as f64, 10, auto, if auto { 0.8 } else { 0.0 })).collect()
    }

    #[test]
    fn single_twenty_minute_run() {
        let r = aggregate(&run(0.0, 1200, true), StatsConfig::default());
        assert_eq!(r.runs.len(), 1);
        assert!((r.runs[0].duration - 1200.0).abs() < 1e-6);
        assert!(!r.runs[0].short && !r.runs[0].aborted);
    }

    #[test]
    fn fourteen_and_sixteen_minute_runs() {
        let mut lines = run(0.0, 14 * 60, true);
        lines.extend(run(14.0 * 60.0, 10, false));
        lines.extend(run(15.0 * 60.0, 16 * 60, true));
        let r = aggregate(&lines, StatsConfig::default());
        assert_eq!(r.runs.len(), 2);
        assert!(r.runs[0].short);
        assert!(!r.runs[1].short);
    }

    #[test]
    fn short_distance_is_aborted() {
        let lines = vec![tick(1.0, 1.0, 10, true, 3.0), tick(2.0, 2.0, 10, false, 0.0)];
        let r = aggregate(&lines, StatsConfig::default());
        assert!(r.runs[0].aborted);
    }

    #[test]
    fn empty_log_gives_zeroed_report() {
        assert_eq!(stats_from_text("", StatsConfig::default()).unwrap(), CampaignReport::default());
    }
}
