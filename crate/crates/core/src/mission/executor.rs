//! Mission state machine: walks the planned route one edge at a time,
//! records captures and traversal intervals, and heads home when the battery
//! cannot cover the rest of the leg plus the return.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::routing::{distances, shortest_path, RoutingError};
use super::supergraph::Supergraph;
use super::tsp::{plan_tour, TourError};
use crate::teach_repeat::RepeatState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionStatus {
    Planned,
    Running,
    Paused,
    Completed,
    Aborted,
}

impl MissionStatus {
    /// Legal status transitions; PAUSED and RUNNING may alternate.
    pub fn may_become(self, next: MissionStatus) -> bool {
        use MissionStatus::*;
        matches!(
            (self, next),
            (Planned, Running) | (Running, Paused) | (Running, Completed) | (Running, Aborted) | (Paused, Running) | (Paused, Aborted)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// Supergraph edge index.
    pub edge: usize,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraversalOutcome {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalRecord {
    pub mission: String,
    pub edge: String,
    pub from: String,
    pub to: String,
    pub t_start: f64,
    pub t_end: f64,
    pub outcome: TraversalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEvent {
    pub mission: String,
    pub target: String,
    pub stamp: f64,
}

/// Where to pick up an interrupted mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeBookmark {
    /// Route steps finished before the interruption.
    pub step: usize,
    /// Last node reached.
    pub node: String,
    pub remaining_targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub id: String,
    pub start: String,
    pub targets: Vec<String>,
    pub tour: Vec<String>,
    pub route: Vec<Step>,
    /// (steps completed, target) pairs: the capture happens on arrival.
    pub capture_plan: Vec<(usize, String)>,
    pub status: MissionStatus,
    pub captures: Vec<CaptureEvent>,
    pub traversals: Vec<TraversalRecord>,
    pub bookmark: Option<ResumeBookmark>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("illegal status change {from:?} -> {to:?}")]
    IllegalTransition { from: MissionStatus, to: MissionStatus },
    #[error(transparent)]
    Tour(#[from] TourError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("route edge {0} has no taught experience")]
    Untaught(usize),
    #[error("mission has no bookmark to resume from")]
    NoBookmark,
}

impl Mission {
    pub fn new(id: String, start: String, targets: Vec<String>, tour: Vec<String>, route: Vec<Step>, capture_plan: Vec<(usize, String)>) -> Self {
        Self {
            id,
            start,
            targets,
            tour,
            route,
            capture_plan,
            status: MissionStatus::Planned,
            captures: Vec::new(),
            traversals: Vec::new(),
            bookmark: None,
        }
    }

    pub fn set_status(&mut self, next: MissionStatus) -> Result<(), MissionError> {
        if !self.status.may_become(next) {
            return Err(MissionError::IllegalTransition { from: self.status, to: next });
        }
        self.status = next;
        Ok(())
    }

    pub fn route_length(&self, g: &Supergraph) -> f64 {
        self.route.iter().map(|s| g.edges[s.edge].length).sum()
    }

    fn remaining_targets(&self) -> Vec<String> {
        self.targets
            .iter()
            .filter(|t| !self.captures.iter().any(|c| &c.target == *t))
            .cloned()
            .collect()
    }

    /// Route edges all reference taught experiences.
    pub fn audit(&self, g: &Supergraph) -> Result<(), MissionError> {
        for s in &self.route {
            if g.edges.get(s.edge).is_none_or(|e| e.experiences.is_empty()) {
                return Err(MissionError::Untaught(s.edge));
            }
        }
        Ok(())
    }

    /// Re-plan the uncaptured targets from the given node, keeping the
    /// mission id and history. Paused or aborted missions only.
    pub fn resume(&self, g: &Supergraph, from: &str) -> Result<Mission, MissionError> {
        let bm = self.bookmark.as_ref().ok_or(MissionError::NoBookmark)?;
        let mut m = plan_tour(g, self.id.clone(), from, &bm.remaining_targets)?;
        m.targets = self.targets.clone();
        m.captures = self.captures.clone();
        m.traversals = self.traversals.clone();
        m.status = MissionStatus::Paused;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub battery_margin: f64,
    pub capture_radius: f64,
    /// Drive back to the dock node once every target is captured.
    pub return_to_dock: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            battery_margin: 1.3,
            capture_radius: 0.5,
            return_to_dock: true,
        }
    }
}

/// What the navigation stack reports each tick while a step is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavReport {
    pub t: f64,
    /// Battery energy left, joules.
    pub battery: f64,
    pub repeat: RepeatState,
    pub along_track: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    /// Start repeating this step's edge.
    Traverse(Step),
    Capture(CaptureEvent),
    /// Mission truncated for energy; the following traversals head home.
    ReturnToDock,
    /// At the dock node's staging area: hand over to docking.
    Dock,
    Aborted(ResumeBookmark),
    /// Route finished away from the dock with no return requested.
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Outbound,
    Homing,
    Done,
}

#[derive(Debug, Clone)]
pub struct MissionRunner {
    pub mission: Mission,
    pub config: MissionConfig,
    /// Worst-case drain used for the reserve check, joules per metre.
    energy_per_metre: f64,
    phase: Phase,
    step: usize,
    homing: Vec<Step>,
    home_step: usize,
    active: Option<(Step, f64)>,
    node: String,
    truncate_pending: bool,
}

impl MissionRunner {
    pub fn new(mission: Mission, config: MissionConfig, energy_per_metre: f64) -> Self {
        let node = mission.start.clone();
        Self {
            mission,
            config,
            energy_per_metre,
            phase: Phase::Outbound,
            step: 0,
            homing: Vec::new(),
            home_step: 0,
            active: None,
            node,
            truncate_pending: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_homing(&self) -> bool {
        self.phase == Phase::Homing
    }

    pub fn active_step(&self) -> Option<&Step> {
        self.active.as_ref().map(|(s, _)| s)
    }

    /// Last node reached.
    pub fn node(&self) -> &str {
        &self.node
    }

    /// Energy needed, with margin, to finish `remaining` metres of the
    /// current edge and then return to the dock from `to`.
    fn reserve_needed(&self, g: &Supergraph, remaining: f64, to: &str) -> f64 {
        let home = distances(g, &g.dock_node).get(to).copied().unwrap_or(f64::INFINITY);
        (remaining.max(0.0) + home) * self.energy_per_metre * self.config.battery_margin
    }

    pub fn start(&mut self, g: &Supergraph, t: f64, battery: f64) -> Result<Vec<Directive>, MissionError> {
        self.mission.audit(g)?;
        self.mission.set_status(MissionStatus::Running)?;
        let mut out = Vec::new();
        self.capture_due(t, &mut out);
        self.advance(g, t, battery, &mut out)?;
        Ok(out)
    }

    fn capture_due(&mut self, t: f64, out: &mut Vec<Directive>) {
        let due: Vec<String> = self
            .mission
            .capture_plan
            .iter()
            .filter(|(k, _)| *k == self.step)
            .map(|(_, target)| target.clone())
            .collect();
        for target in due {
            if self.mission.captures.iter().any(|c| c.target == target) {
                continue;
            }
            let ev = CaptureEvent {
                mission: self.mission.id.clone(),
                target,
                stamp: t,
            };
            self.mission.captures.push(ev.clone());
            out.push(Directive::Capture(ev));
        }
    }

    fn begin_homing(&mut self, g: &Supergraph) -> Result<(), MissionError> {
        let r = shortest_path(g, &self.node, &g.dock_node)?;
        self.homing = r
            .nodes
            .windows(2)
            .zip(&r.edges)
            .map(|(w, &e)| Step {
                edge: e,
                from: w[0].clone(),
                to: w[1].clone(),
            })
            .collect();
        self.home_step = 0;
        self.phase = Phase::Homing;
        Ok(())
    }

    fn truncate(&mut self) -> Result<(), MissionError> {
        self.mission.set_status(MissionStatus::Paused)?;
        self.mission.bookmark = Some(ResumeBookmark {
            step: self.step,
            node: self.node.clone(),
            remaining_targets: self.mission.remaining_targets(),
        });
        Ok(())
    }

    /// Pick the next step once nothing is active.
    fn advance(&mut self, g: &Supergraph, t: f64, battery: f64, out: &mut Vec<Directive>) -> Result<(), MissionError> {
        if self.phase == Phase::Outbound {
            if self.step < self.mission.route.len() {
                let s = self.mission.route[self.step].clone();
                let need = self.reserve_needed(g, g.edges[s.edge].length, &s.to);
                if battery >= need {
                    self.active = Some((s.clone(), t));
                    out.push(Directive::Traverse(s));
                    return Ok(());
                }
                self.truncate()?;
                out.push(Directive::ReturnToDock);
                self.begin_homing(g)?;
            } else {
                self.mission.set_status(MissionStatus::Completed)?;
                if self.config.return_to_dock {
                    self.begin_homing(g)?;
                } else {
                    self.phase = Phase::Done;
                    out.push(if self.node == g.dock_node { Directive::Dock } else { Directive::Finished });
                    return Ok(());
                }
            }
        }
        if self.phase == Phase::Homing {
            if self.home_step < self.homing.len() {
                let s = self.homing[self.home_step].clone();
                self.active = Some((s.clone(), t));
                out.push(Directive::Traverse(s));
            } else {
                self.phase = Phase::Done;
                out.push(Directive::Dock);
            }
        }
        Ok(())
    }

    pub fn tick(&mut self, g: &Supergraph, report: &NavReport) -> Result<Vec<Directive>, MissionError> {
        let mut out = Vec::new();
        let Some((step, t_start)) = self.active.clone() else {
            return Ok(out);
        };
        let record = |outcome| TraversalRecord {
            mission: self.mission.id.clone(),
            edge: g.edges[step.edge].key(),
            from: step.from.clone(),
            to: step.to.clone(),
            t_start,
            t_end: report.t,
            outcome,
        };
        match report.repeat {
            RepeatState::Completed => {
                let rec = record(TraversalOutcome::Completed);
                self.mission.traversals.push(rec);
                self.active = None;
                self.node = step.to.clone();
                match self.phase {
                    Phase::Outbound => {
                        self.step += 1;
                        self.capture_due(report.t, &mut out);
                        if self.truncate_pending {
                            self.truncate_pending = false;
                            self.truncate()?;
                            self.begin_homing(g)?;
                        }
                    }
                    Phase::Homing => self.home_step += 1,
                    Phase::Done => {}
                }
                self.advance(g, report.t, report.battery, &mut out)?;
            }
            RepeatState::Aborted => {
                let rec = record(TraversalOutcome::Aborted);
                self.mission.traversals.push(rec);
                self.active = None;
                let bm = ResumeBookmark {
                    step: self.step,
                    node: self.node.clone(),
                    remaining_targets: self.mission.remaining_targets(),
                };
                // A completed mission that fails on the way home stays completed.
                if self.mission.status.may_become(MissionStatus::Aborted) {
                    self.mission.set_status(MissionStatus::Aborted)?;
                }
                self.mission.bookmark = Some(bm.clone());
                self.phase = Phase::Done;
                out.push(Directive::Aborted(bm));
            }
            RepeatState::Following | RepeatState::Lost => {
                if self.phase == Phase::Outbound && !self.truncate_pending {
                    let remaining = g.edges[step.edge].length - report.along_track;
                    if report.battery < self.reserve_needed(g, remaining, &step.to) {
                        self.truncate_pending = true;
                        out.push(Directive::ReturnToDock);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Timing-diagram rows: mission id, edge, t_start, t_end, outcome.
    pub fn timing_csv(records: &[TraversalRecord]) -> String {
        let mut s = String::from("mission,edge,t_start,t_end,outcome\n");
        for r in records {
            let o = match r.outcome {
                TraversalOutcome::Completed => "COMPLETED",
                TraversalOutcome::Aborted => "ABORTED",
            };
            s.push_str(&format!("{},{},{:.3},{:.3},{}\n", r.mission, r.edge, r.t_start, r.t_end, o));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::supergraph::tests::bare;

    fn site() -> Supergraph {
        bare(&["S", "A", "B", "C"], &[("S", "A", 10.0), ("A", "B", 10.0), ("B", "C", 10.0)])
    }

    fn report(t: f64, battery: f64, repeat: RepeatState, along: f64) -> NavReport {
        NavReport { t, battery, repeat, along_track: along }
    }

    /// Drive every step to completion at 10 s per edge.
    fn run_all(r: &mut MissionRunner, g: &Supergraph, battery: impl Fn(f64) -> f64) -> Vec<Directive> {
        let mut all = r.start(g, 0.0, battery(0.0)).unwrap();
        let mut t = 0.0;
        while !r.is_done() {
            t += 5.0;
            all.extend(r.tick(g, &report(t, battery(t), RepeatState::Following, 5.0)).unwrap());
            if r.is_done() {
                break;
            }
            t += 5.0;
            all.extend(r.tick(g, &report(t, battery(t), RepeatState::Completed, 10.0)).unwrap());
        }
        all
    }

    #[test]
    fn all_targets_visited_completes() {
        let g = site();
        let m = plan_tour(&g, "m1", "S", &["C".into(), "A".into()]).unwrap();
        let mut r = MissionRunner::new(m, MissionConfig::default(), 1.0);
        let d = run_all(&mut r, &g, |_| 1e9);
        assert_eq!(r.mission.status, MissionStatus::Completed);
        let caps: Vec<&str> = r.mission.captures.iter().map(|c| c.target.as_str()).collect();
        assert_eq!(caps, vec!["A", "C"]);
        assert_eq!(d.last(), Some(&Directive::Dock));
        // Three out, three home.
        assert_eq!(r.mission.traversals.len(), 6);
        let csv = MissionRunner::timing_csv(&r.mission.traversals);
        assert!(csv.starts_with("mission,edge,t_start,t_end,outcome\nm1,A-S,0.000,10.000,COMPLETED"));
    }

    #[test]
    fn low_battery_turns_home() {
        let g = site();
        let m = plan_tour(&g, "m2", "S", &["C".into()]).unwrap();
        let mut r = MissionRunner::new(m, MissionConfig::default(), 1.0);
        // Enough at the start for S-A plus return (26 J), then collapses.
        let d = run_all(&mut r, &g, |t| if t < 4.0 { 100.0 } else { 30.0 });
        assert!(d.contains(&Directive::ReturnToDock));
        assert_eq!(r.mission.status, MissionStatus::Paused);
        let bm = r.mission.bookmark.clone().unwrap();
        assert_eq!(bm.remaining_targets, vec!["C"]);
        assert_eq!(d.last(), Some(&Directive::Dock));
        assert_eq!(r.node(), "S");
        let resumed = r.mission.resume(&g, "S").unwrap();
        assert_eq!(resumed.tour, vec!["C"]);
    }

    #[test]
    fn abort_leaves_a_bookmark() {
        let g = site();
        let m = plan_tour(&g, "m3", "S", &["B".into()]).unwrap();
        let mut r = MissionRunner::new(m, MissionConfig::default(), 1.0);
        r.start(&g, 0.0, 1e9).unwrap();
        r.tick(&g, &report(10.0, 1e9, RepeatState::Completed, 10.0)).unwrap();
        let d = r.tick(&g, &report(50.0, 1e9, RepeatState::Aborted, 3.0)).unwrap();
        assert_eq!(r.mission.status, MissionStatus::Aborted);
        let bm = r.mission.bookmark.clone().unwrap();
        assert_eq!(bm.node, "A");
        assert_eq!(bm.step, 1);
        assert!(matches!(&d[0], Directive::Aborted(b) if *b == bm));
        assert_eq!(r.mission.traversals.last().unwrap().outcome, TraversalOutcome::Aborted);
    }

    #[test]
    fn status_transitions() {
        use MissionStatus::*;
        assert!(Planned.may_become(Running));
        assert!(Paused.may_become(Running) && Running.may_become(Paused));
        assert!(!Completed.may_become(Running));
        assert!(!Aborted.may_become(Running));
        assert!(!Planned.may_become(Completed));
    }
}
