//! Drives an [`Engine`] the way the people on site would: a scripted
//! operator for teaching, carrying and dispatching, and a day-by-day
//! campaign scheduler on top of it.

use std::collections::VecDeque;
use std::io::Write;

use log::info;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::mission::EdgeScore;
use crate::sim::{stream_rng, Stream, DT};

use super::engine::{Engine, EngineError};
use super::operator::OperatorDriver;
use super::scenario::{Action, Scenario, Start};
use super::stats::CampaignReport;
use super::telemetry::{Mode, TelemetryWriter};

pub const OPERATOR: &str = "operator";
pub const DAY: f64 = 86_400.0;

#[derive(Debug, Clone)]
enum Task {
    Teach { from: String, to: String, reteach: Option<EdgeScore> },
    Repeat { from: String, to: String },
    Mission { targets: Vec<String>, id: Option<String>, gate: Option<Gate> },
    Dock,
    Carry(Start),
    Initialise { node: String, heading: Option<f64> },
    Reteach,
    Wait(f64),
    /// Tick until motion time reaches this stamp.
    Until(f64),
    /// Campaign day boundary: queue that day's work.
    Day(u32),
    /// Put the robot back on the charger unless it already is.
    Home,
}

/// Campaign missions are skipped late in the day or on a low battery.
#[derive(Debug, Clone, Copy)]
struct Gate {
    latest: f64,
    min_battery: f64,
}

#[derive(Debug)]
enum Running {
    Teaching { driver: OperatorDriver, to: String },
    /// Waiting for the engine to go quiet.
    Engine,
    Until(f64),
}

#[derive(Debug)]
pub struct Director {
    pub engine: Engine,
    queue: VecDeque<Task>,
    running: Option<Running>,
    rng: ChaCha8Rng,
    mission_seq: u32,
}

impl Director {
    pub fn new(scenario: Scenario, writer: TelemetryWriter) -> Result<Self, EngineError> {
        let rng = stream_rng(scenario.seed, Stream::Operator);
        let engine = Engine::new(scenario, writer)?;
        Ok(Self::from_engine(engine, rng))
    }

    pub fn from_engine(engine: Engine, rng: ChaCha8Rng) -> Self {
        let mut d = Self {
            queue: VecDeque::new(),
            running: None,
            rng,
            mission_seq: 0,
            engine,
        };
        d.load_script();
        d
    }

    fn load_script(&mut self) {
        let sc = &self.engine.scenario;
        let site = sc.site.clone();
        for a in sc.script.clone() {
            let task = match a {
                Action::Teach { from, to } => Task::Teach { from, to, reteach: None },
                Action::TeachAll => {
                    for e in site.iter().flat_map(|s| &s.edges) {
                        self.queue.push_back(Task::Teach {
                            from: e.a.clone(),
                            to: e.b.clone(),
                            reteach: None,
                        });
                    }
                    continue;
                }
                Action::Repeat { from, to } => Task::Repeat { from, to },
                Action::Mission { targets, id } => Task::Mission { targets, id, gate: None },
                Action::Dock => Task::Dock,
                Action::Carry(s) => Task::Carry(s),
                Action::Initialise { node, heading } => Task::Initialise { node, heading },
                Action::Reteach => Task::Reteach,
                Action::Wait { seconds } => Task::Wait(seconds),
            };
            self.queue.push_back(task);
        }
        if let Some(c) = &sc.campaign {
            if let Some(site) = &site {
                for e in &site.edges {
                    self.queue.push_back(Task::Teach {
                        from: e.a.clone(),
                        to: e.b.clone(),
                        reteach: None,
                    });
                }
            }
            self.queue.push_back(Task::Home);
            for day in c.first_mission_day..c.days {
                self.queue.push_back(Task::Day(day));
            }
            self.queue.push_back(Task::Until(self.day_start(c.days)));
        }
    }

    /// Motion time at which calendar day `day` begins.
    fn day_start(&self, day: u32) -> f64 {
        let r = &self.engine.scenario.runtime;
        ((day as f64 * DAY - r.calendar_start) / r.accel).max(0.0)
    }

    pub fn is_finished(&self) -> bool {
        self.queue.is_empty() && self.running.is_none()
    }

    /// Motion time the run should stop at when no duration is given.
    pub fn natural_end(&self) -> f64 {
        self.engine.scenario.runtime.max_duration
    }

    /// One operator decision followed by one engine tick.
    pub fn step(&mut self) -> Result<(), EngineError> {
        self.drive()?;
        self.engine.tick()
    }

    fn drive(&mut self) -> Result<(), EngineError> {
        loop {
            match self.running.take() {
                Some(Running::Teaching { mut driver, to }) => {
                    let pose = self.engine.sim().state.pose;
                    match driver.command(&pose) {
                        Some(c) => {
                            self.engine.teleop(OPERATOR, c.v, c.w)?;
                            self.running = Some(Running::Teaching { driver, to });
                        }
                        None => {
                            self.engine.stop_teach(OPERATOR, Some(to))?;
                            self.engine.release_drive(OPERATOR)?;
                            continue;
                        }
                    }
                    return Ok(());
                }
                Some(Running::Engine) => {
                    if self.engine.is_busy() {
                        self.running = Some(Running::Engine);
                        return Ok(());
                    }
                    continue;
                }
                Some(Running::Until(t)) => {
                    if self.engine.t() + 1e-9 < t {
                        self.running = Some(Running::Until(t));
                        return Ok(());
                    }
                    continue;
                }
                None => {}
            }
            let Some(task) = self.queue.pop_front() else { return Ok(()) };
            self.begin(task)?;
        }
    }

    fn begin(&mut self, task: Task) -> Result<(), EngineError> {
        info!("t={:.1} task {:?}", self.engine.t(), task);
        match task {
            Task::Teach { from, to, reteach } => {
                let site = self.engine.scenario.site.clone().ok_or_else(|| EngineError::Invalid("no site".into()))?;
                let edge = site
                    .edge(&crate::sim::edge_key(&from, &to))
                    .ok_or_else(|| EngineError::Invalid(format!("no site edge {from}-{to}")))?;
                let points = site.polyline(edge, &from).ok_or_else(|| EngineError::UnknownNode(from.clone()))?;
                let driver = OperatorDriver::new(self.engine.scenario.operator, points);
                self.engine.carry(&Start::Node {
                    code: from.clone(),
                    heading: driver.initial_heading(),
                })?;
                self.engine.acquire_drive(OPERATOR)?;
                match reteach {
                    Some(score) => self.engine.start_reteach(OPERATOR, score, from)?,
                    None => self.engine.start_teach(OPERATOR, Some(from))?,
                }
                self.running = Some(Running::Teaching { driver, to });
            }
            Task::Repeat { from, to } => {
                if self.engine.node() != Some(from.as_str()) {
                    let heading = self.node_heading(&from, &to);
                    self.engine.carry(&Start::Node { code: from.clone(), heading })?;
                }
                self.engine.start_repeat(&from, &to)?;
                self.running = Some(Running::Engine);
            }
            Task::Mission { targets, id, gate } => {
                let e = &self.engine;
                if gate.is_some_and(|g| e.t() > g.latest || e.sim().state.battery < g.min_battery) {
                    return Ok(());
                }
                self.engine.dispatch(&targets, id)?;
                self.running = Some(Running::Engine);
            }
            Task::Dock => {
                self.engine.start_docking()?;
                self.running = Some(Running::Engine);
            }
            Task::Carry(s) => self.engine.carry(&s)?,
            Task::Initialise { node, heading } => self.engine.initialise(Some(&node), None, heading)?,
            Task::Reteach => {
                let site = self.engine.scenario.site.clone();
                let mut tasks = Vec::new();
                for score in self.engine.reteach_candidates() {
                    let Some(e) = site.as_ref().and_then(|s| s.edge(&score.edge)) else { continue };
                    tasks.push(Task::Teach {
                        from: e.a.clone(),
                        to: e.b.clone(),
                        reteach: Some(score),
                    });
                }
                for t in tasks.into_iter().rev() {
                    self.queue.push_front(t);
                }
            }
            Task::Wait(s) => self.running = Some(Running::Until(self.engine.t() + s)),
            Task::Until(t) => self.running = Some(Running::Until(t)),
            Task::Day(day) => self.plan_day(day),
            Task::Home => {
                if self.engine.mode() != Mode::Charging && self.engine.sim().world.dock.is_some() {
                    self.engine.carry(&Start::Docked)?;
                }
            }
        }
        Ok(())
    }

    fn node_heading(&self, from: &str, to: &str) -> f64 {
        let site = self.engine.scenario.site.as_ref();
        site.and_then(|s| s.edge(&crate::sim::edge_key(from, to)).and_then(|e| s.polyline(e, from)))
            .map(|p| OperatorDriver::new(self.engine.scenario.operator, p).initial_heading())
            .unwrap_or(0.0)
    }

    fn plan_day(&mut self, day: u32) {
        let Some(c) = self.engine.scenario.campaign.clone() else { return };
        let start = self.day_start(day);
        let mut tasks = vec![Task::Until(start.max(self.engine.t())), Task::Reteach, Task::Home];
        let plots: Vec<String> = self
            .engine
            .supergraph()
            .nodes
            .values()
            .filter(|n| n.plot.is_some())
            .map(|n| n.name.clone())
            .collect();
        // Missions are drawn up front so the plan does not depend on
        // how the day went.
        let gate = Gate {
            latest: start + c.mission_cutoff,
            min_battery: c.min_battery * self.engine.scenario.robot.battery.capacity,
        };
        for _ in 0..c.missions_per_day {
            let k = c.targets_per_mission.min(plots.len());
            let mut targets: Vec<String> = sample(&mut self.rng, plots.len(), k).into_iter().map(|i| plots[i].clone()).collect();
            targets.sort();
            self.mission_seq += 1;
            tasks.push(Task::Mission {
                targets,
                id: Some(format!("D{day:02}M{}", self.mission_seq)),
                gate: Some(gate),
            });
            tasks.push(Task::Home);
        }
        for t in tasks.into_iter().rev() {
            self.queue.push_front(t);
        }
    }
}

/// Result of a headless run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub report: CampaignReport,
    pub ticks: u64,
    pub t_end: f64,
}

impl Director {
    /// Step for `duration` motion seconds, or until the script or campaign
    /// is done when `None`, then flush telemetry.
    pub fn run(&mut self, duration: Option<f64>) -> Result<RunSummary, EngineError> {
        let limit = duration.unwrap_or_else(|| self.natural_end());
        let n = (limit / DT + 1e-6).floor() as u64;
        let mut ticks = 0;
        while ticks < n {
            if duration.is_none() && self.is_finished() {
                break;
            }
            self.step()?;
            ticks += 1;
        }
        let report = self.engine.finish()?;
        Ok(RunSummary {
            report,
            ticks,
            t_end: self.engine.t(),
        })
    }
}

/// Run a scenario headless, writing NDJSON telemetry to `sink`.
pub fn run_scenario(scenario: Scenario, duration: Option<f64>, sink: Box<dyn Write + Send>) -> Result<RunSummary, EngineError> {
    let writer = TelemetryWriter::new(sink, Engine::header(&scenario));
    Director::new(scenario, writer)?.run(duration)
}
