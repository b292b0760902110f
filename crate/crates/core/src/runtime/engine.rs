//! The orchestrator. One tick runs, in order: sim step, sensors, safety,
//! localiser, the active controller, the mission executive, telemetry.

use std::path::Path;

use log::debug;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docking::{DockModel, DockingController, DockingEvent, DockingPhase};
use crate::error::ConfigError;
use crate::geometry::{Point2, Pose2};
use crate::graph::{ExperienceGraph, ExperienceId, GraphError, KeyframeId, Vocabulary};
use crate::localisation::{live_features, Localiser, LocaliserError, Odometry, TickOutput};
use crate::mission::{
    plan_tour, Directive, EdgeScore, Mission, MissionError, MissionRunner, MissionStatus, NavReport, Step, Supergraph,
    SupergraphError, TourError, TraversalOutcome, TraversalSample,
};
use crate::safety::{clamp_command, cluster_points, decide, exempt_segments, SafetyDecision};
use crate::sim::world::random_unit_vector;
use crate::sim::{edge_key, stream_rng, CameraObservation, Command, DockPlacement, LidarScan, Simulator, Stream, DT};
use crate::teach_repeat::{RepeatController, RepeatState, Teacher};

use super::replay::DriveSample;
use super::scenario::{Scenario, Start};
use super::stats::{CampaignReport, ReportBuilder, StatsConfig};
use super::telemetry::{Event, EventRecord, Header, LogLine, Mode, TelemetryRecord, TelemetryWriter, SCHEMA, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Supergraph(#[from] SupergraphError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Tour(#[from] TourError),
    #[error(transparent)]
    Localiser(#[from] LocaliserError),
    #[error(transparent)]
    Format(#[from] crate::graph::FormatError),
    #[error("telemetry: {0}")]
    Io(#[from] std::io::Error),
    #[error("drive control is held by {holder}")]
    DriveConflict { holder: String },
    #[error("client {0:?} does not hold drive control")]
    NotHolder(String),
    #[error("cannot {action} in mode {mode:?}")]
    Busy { action: &'static str, mode: Mode },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("edge {0} has no taught experience")]
    Untaught(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionView {
    pub id: String,
    pub status: MissionStatus,
    pub start: String,
    pub targets: Vec<String>,
    pub tour: Vec<String>,
    pub route: Vec<(String, String, String)>,
    pub length: f64,
    /// Worst-case energy for the route, joules.
    pub energy_estimate: f64,
    pub captures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachView {
    pub experience: Option<ExperienceId>,
    pub keyframes: usize,
    pub from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub stamp: f64,
    pub calendar: f64,
    pub mode: Mode,
    pub pose: Pose2,
    pub estimate: Option<Pose2>,
    pub localised: bool,
    pub inliers: u32,
    pub lost: bool,
    pub speed_limit: f64,
    pub estop: bool,
    pub battery: f64,
    pub battery_fraction: f64,
    pub odometer: f64,
    pub node: Option<String>,
    pub edge: Option<String>,
    pub along_track: Option<f64>,
    pub mission: Option<MissionView>,
    pub drive_holder: Option<String>,
    pub docking_phase: Option<DockingPhase>,
    pub teach: Option<TeachView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachSummary {
    pub experience: ExperienceId,
    pub keyframes: usize,
    pub length: f64,
    pub edge: Option<String>,
}

#[derive(Debug)]
struct TeachSession {
    /// Opened on the first tick so it keyframes that tick's observation.
    teacher: Option<Teacher>,
    from: Option<String>,
    reteach: Option<EdgeScore>,
    t0: f64,
    trace: Vec<DriveSample>,
}

#[derive(Debug)]
struct NavSession {
    controller: RepeatController,
    mission: Option<String>,
    step: Step,
    edge: String,
    experience: ExperienceId,
    t_start: f64,
    distance: f64,
    ticks: u32,
    failed: u32,
    inlier_sum: u64,
    lost_events: u32,
    state: RepeatState,
    along: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DockStage {
    Undock { reversed: f64, turned: f64 },
    Approach,
    Docked { since: f64 },
}

#[derive(Debug)]
struct DockSession {
    controller: DockingController,
    stage: DockStage,
}

#[derive(Debug, Clone)]
struct Period {
    mode: Mode,
    ticks: u32,
    autonomous_s: f64,
    autonomous_m: f64,
}

pub struct Engine {
    pub scenario: Scenario,
    sim: Simulator,
    graph: ExperienceGraph,
    supergraph: Supergraph,
    localiser: Localiser,
    odometry: Odometry,
    odo_rng: ChaCha8Rng,
    mode: Mode,
    cmd: Command,
    decision: SafetyDecision,
    lease: Option<String>,
    teleop: Option<(Command, f64)>,
    teach: Option<TeachSession>,
    nav: Option<NavSession>,
    dock: Option<DockSession>,
    mission: Option<MissionRunner>,
    mission_pending: bool,
    logged_status: Option<MissionStatus>,
    history: Vec<Mission>,
    samples: Vec<TraversalSample>,
    node: Option<String>,
    pending_init: Option<(Vec<KeyframeId>, Option<f64>)>,
    inliers: u32,
    charged: bool,
    mission_seq: u32,
    period: Period,
    pending: Vec<EventRecord>,
    writer: TelemetryWriter,
    builder: ReportBuilder,
    outbox: Option<Vec<EventRecord>>,
    last_trace: Vec<DriveSample>,
    scans: Option<Vec<LidarScan>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("t", &self.sim.t).field("mode", &self.mode).finish()
    }
}

/// Vocabulary trained on a seeded sample of the world's descriptors.
pub fn train_vocabulary(scenario: &Scenario, sim: &Simulator) -> Result<Vocabulary, ConfigError> {
    let cfg = scenario.vocabulary;
    let mut rng = stream_rng(scenario.seed, Stream::Vocabulary);
    let lms = &sim.world.landmarks;
    let take = cfg.sample.min(lms.len());
    let mut set: Vec<Vec<f64>> = sample(&mut rng, lms.len(), take).into_iter().map(|i| lms[i].descriptor.clone()).collect();
    while set.len() < cfg.words.max(cfg.sample.min(cfg.words * 4)) {
        set.push(random_unit_vector(&mut rng, sim.world.descriptor_dim));
    }
    Vocabulary::train(&set, cfg.words, cfg.iterations, &mut rng).map_err(|e| ConfigError::Invalid(format!("vocabulary: {e}")))
}

fn start_pose(scenario: &Scenario) -> Result<Pose2, ConfigError> {
    let dock = scenario.world.dock;
    Ok(match &scenario.start {
        Some(Start::Docked) | None if dock.is_some() => dock.expect("checked").docked_pose_world(),
        None | Some(Start::Docked) => Pose2::IDENTITY,
        Some(Start::Pose(p)) => *p,
        Some(Start::Node { code, heading }) => {
            let site = scenario.site.as_ref().ok_or_else(|| ConfigError::Invalid("start: node needs a site".into()))?;
            let n = site.node(code).ok_or_else(|| ConfigError::Invalid(format!("start: unknown node {code:?}")))?;
            Pose2::new(n.position.x, n.position.y, *heading)
        }
    })
}

impl Engine {
    pub fn new(scenario: Scenario, writer: TelemetryWriter) -> Result<Self, EngineError> {
        scenario.validate()?;
        let pose = start_pose(&scenario)?;
        let sim = Simulator::new(scenario.sim_config(), scenario.site.as_ref(), scenario.seed, pose, scenario.initial_battery)?;
        let graph = ExperienceGraph::new(train_vocabulary(&scenario, &sim)?);
        let mut supergraph = Supergraph::new(scenario.site.as_ref().map(|s| s.dock_node.clone()).unwrap_or_default());
        if let Some(site) = &scenario.site {
            for n in &site.nodes {
                supergraph.add_node(n.code.clone(), n.position, n.plot);
            }
        }
        Ok(Self::assemble(scenario, sim, graph, supergraph, writer))
    }

    /// Start from a saved map instead of an empty one.
    pub fn with_map(scenario: Scenario, graph: ExperienceGraph, supergraph: Supergraph, writer: TelemetryWriter) -> Result<Self, EngineError> {
        scenario.validate()?;
        supergraph.audit_against(&graph)?;
        let pose = start_pose(&scenario)?;
        let sim = Simulator::new(scenario.sim_config(), scenario.site.as_ref(), scenario.seed, pose, scenario.initial_battery)?;
        Ok(Self::assemble(scenario, sim, graph, supergraph, writer))
    }

    fn assemble(scenario: Scenario, sim: Simulator, graph: ExperienceGraph, supergraph: Supergraph, writer: TelemetryWriter) -> Self {
        let docked = sim.world.dock.is_some_and(|d| d.in_charging_zone(&sim.state.pose));
        let node = if docked {
            scenario.site.as_ref().map(|s| s.dock_node.clone())
        } else {
            match &scenario.start {
                Some(Start::Node { code, .. }) => Some(code.clone()),
                _ => None,
            }
        };
        let mode = if docked { Mode::Charging } else { Mode::Idle };
        Self {
            localiser: Localiser::new(scenario.localiser),
            odometry: Odometry::new(scenario.vo),
            odo_rng: stream_rng(scenario.seed, Stream::Odometry),
            mode,
            cmd: Command::STOP,
            decision: SafetyDecision {
                speed_limit: scenario.safety.v_max,
                estop: false,
                triggering: Vec::new(),
            },
            lease: None,
            teleop: None,
            teach: None,
            nav: None,
            dock: None,
            mission: None,
            mission_pending: false,
            logged_status: None,
            history: Vec::new(),
            samples: Vec::new(),
            node,
            pending_init: None,
            inliers: 0,
            charged: false,
            mission_seq: 0,
            period: Period {
                mode,
                ticks: 0,
                autonomous_s: 0.0,
                autonomous_m: 0.0,
            },
            pending: Vec::new(),
            writer,
            builder: ReportBuilder::new(StatsConfig::default()),
            outbox: None,
            last_trace: Vec::new(),
            scans: None,
            sim,
            graph,
            supergraph,
            scenario,
        }
    }

    pub fn header(scenario: &Scenario) -> Header {
        Header {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            accel: scenario.runtime.accel,
        }
    }

    // ----- accessors -----

    pub fn t(&self) -> f64 {
        self.sim.t
    }

    pub fn calendar(&self) -> f64 {
        self.scenario.runtime.calendar_start + self.scenario.runtime.accel * self.sim.t
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn graph(&self) -> &ExperienceGraph {
        &self.graph
    }

    pub fn supergraph(&self) -> &Supergraph {
        &self.supergraph
    }

    pub fn localiser(&self) -> &Localiser {
        &self.localiser
    }

    pub fn node(&self) -> Option<&str> {
        self.node.as_deref()
    }

    pub fn samples(&self) -> &[TraversalSample] {
        &self.samples
    }

    pub fn missions(&self) -> &[Mission] {
        &self.history
    }

    pub fn active_mission(&self) -> Option<&Mission> {
        self.mission.as_ref().map(|r| &r.mission)
    }

    pub fn is_busy(&self) -> bool {
        self.mission.is_some() || self.nav.is_some() || self.dock.is_some() || self.teach.is_some()
    }

    pub fn docking_phase(&self) -> Option<DockingPhase> {
        self.dock.as_ref().map(|d| d.controller.phase())
    }

    pub fn report(&self) -> CampaignReport {
        self.builder.report()
    }

    pub fn energy_per_metre(&self) -> f64 {
        self.scenario.robot.battery.worst_case_per_metre(self.scenario.repeat.v_nominal, self.scenario.robot.w_max)
    }

    /// Setpoints of the most recent teach session, relative to its start.
    pub fn last_teach_trace(&self) -> &[DriveSample] {
        &self.last_trace
    }

    /// Keep every scan taken while docking.
    pub fn record_scans(&mut self) {
        self.scans.get_or_insert_with(Vec::new);
    }

    pub fn take_scans(&mut self) -> Vec<LidarScan> {
        self.scans.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn enable_outbox(&mut self) {
        self.outbox.get_or_insert_with(Vec::new);
    }

    pub fn drain_outbox(&mut self) -> Vec<EventRecord> {
        self.outbox.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn dock_placement(&self) -> Result<DockPlacement, EngineError> {
        self.sim.world.dock.ok_or_else(|| EngineError::Invalid("no dock in this world".into()))
    }

    fn dock_node(&self) -> Option<String> {
        (!self.supergraph.dock_node.is_empty()).then(|| self.supergraph.dock_node.clone())
    }

    // ----- events and telemetry -----

    fn event(&mut self, event: Event) {
        debug!("{:.1} {:?}", self.sim.t, event);
        self.pending.push(EventRecord {
            stamp: self.sim.t,
            calendar: self.calendar(),
            event,
        });
    }

    fn set_mode(&mut self, to: Mode) {
        if to != self.mode {
            let from = self.mode;
            self.mode = to;
            self.event(Event::ModeChanged { from, to });
        }
    }

    fn write(&mut self, line: LogLine) -> Result<(), EngineError> {
        self.builder.push(&line);
        self.writer.write(&line)?;
        Ok(())
    }

    fn flush_pending(&mut self) -> Result<Vec<String>, EngineError> {
        let events = std::mem::take(&mut self.pending);
        let mut tags = Vec::with_capacity(events.len());
        for e in events {
            tags.push(e.event.tag().to_string());
            if let Some(o) = self.outbox.as_mut() {
                o.push(e.clone());
            }
            self.write(LogLine::Event(e))?;
        }
        Ok(tags)
    }

    fn telemetry(&mut self, force: bool) -> Result<(), EngineError> {
        let due = force
            || !self.pending.is_empty()
            || self.mode != self.period.mode
            || self.period.ticks >= self.scenario.runtime.telemetry_every;
        if !due {
            return Ok(());
        }
        let tags = self.flush_pending()?;
        if self.period.ticks > 0 {
            let rec = TelemetryRecord {
                stamp: self.sim.t,
                calendar: self.calendar(),
                ticks: self.period.ticks,
                mode: self.period.mode,
                pose: self.sim.state.pose,
                estimate: self.localiser.site_estimate(),
                inliers: self.inliers,
                lost: self.localiser.is_lost(),
                speed_limit: self.decision.speed_limit,
                estop: self.decision.estop,
                battery: self.sim.state.battery,
                odometer: self.sim.state.odometer,
                autonomous_s: self.period.autonomous_s,
                autonomous_m: self.period.autonomous_m,
                mission: self.mission.as_ref().map(|r| r.mission.id.clone()),
                edge: self.nav.as_ref().map(|n| n.edge.clone()),
                tags,
            };
            self.write(LogLine::Tick(rec))?;
        }
        self.period = Period {
            mode: self.mode,
            ticks: 0,
            autonomous_s: 0.0,
            autonomous_m: 0.0,
        };
        Ok(())
    }

    /// Write out everything still buffered.
    pub fn finish(&mut self) -> Result<CampaignReport, EngineError> {
        if self.period.ticks > 0 || !self.pending.is_empty() {
            self.telemetry(true)?;
        }
        self.writer.flush()?;
        Ok(self.report())
    }

    // ----- the tick -----

    pub fn tick(&mut self) -> Result<(), EngineError> {
        let pose0 = self.sim.state.pose;
        let odo0 = self.sim.state.odometer;
        let start_mode = self.mode;
        let nav_active = start_mode == Mode::Repeat && self.nav.is_some();

        // 1. simulator
        if self.mode == Mode::Charging {
            if self.sim.charge(DT).is_err() {
                self.event(Event::Warning {
                    message: "charging requested outside the charging zone".into(),
                });
                self.set_mode(Mode::Idle);
            } else if !self.charged && self.sim.state.battery >= self.scenario.robot.battery.capacity {
                self.charged = true;
                self.event(Event::ChargingFinished);
            }
        } else {
            let was_empty = self.sim.state.battery_empty;
            self.sim.step(self.cmd, DT);
            if self.sim.state.battery_empty && !was_empty {
                self.event(Event::BatteryEmpty);
            }
        }
        let t = self.sim.t;
        let moved = self.sim.state.odometer - odo0;
        self.period.ticks += 1;
        if start_mode.is_autonomous() {
            self.period.autonomous_s += DT;
        }
        if nav_active {
            self.period.autonomous_m += moved;
            if let Some(n) = self.nav.as_mut() {
                n.distance += moved;
            }
        }

        // 2. sensors
        let truth = pose0.inverse().compose(&self.sim.state.pose);
        let vo = self.odometry.step(&truth, &mut self.odo_rng).delta;
        let scan = self.sim.sense_lidar();
        if self.mode == Mode::Docking {
            if let Some(v) = self.scans.as_mut() {
                v.push(scan.clone());
            }
        }
        let localising = self.localiser.is_initialised() || self.pending_init.is_some();
        let camera = self.mode == Mode::Teach || (localising && !matches!(self.mode, Mode::Docking | Mode::Charging));
        let calendar = self.calendar();
        let obs = camera.then(|| self.sim.sense_camera(calendar));

        // 3. safety
        let mut pts = scan.points();
        if self.mode == Mode::Docking {
            if let Some(d) = &self.dock {
                pts = exempt_segments(pts, &d.controller.dock_segments(), self.scenario.safety.dock_exemption);
            }
        }
        let s = &self.scenario.safety;
        let decision = decide(&cluster_points(&pts, s.min_object_size, s.max_internal_gap), s);
        if decision.estop != self.decision.estop {
            self.event(Event::Estop { active: decision.estop });
        }
        self.decision = decision;

        // 4. localiser
        let loc = self.localise(&vo, obs.as_ref(), t)?;
        self.inliers = loc.map(|o| o.inliers as u32).unwrap_or(0);

        // 5. controller
        let raw = match self.mode {
            Mode::Idle | Mode::Charging => Command::STOP,
            Mode::Teleop => self.teleop_setpoint(t),
            Mode::Teach => {
                let c = self.teleop_setpoint(t);
                if let Some(obs) = &obs {
                    self.teach_tick(&vo, obs)?;
                }
                c
            }
            Mode::Repeat => self.nav_tick(loc),
            Mode::Docking => self.dock_tick(&scan, &vo, t),
        };
        let r = &self.scenario.robot;
        self.cmd = clamp_command(raw.clamped(r.v_max, r.w_max), &self.decision);
        self.sim.set_estop(self.decision.estop);

        // 6. mission executive
        self.mission_tick(t)?;

        // 7. telemetry
        self.telemetry(false)
    }

    fn localise(&mut self, vo: &Pose2, obs: Option<&CameraObservation>, t: f64) -> Result<Option<TickOutput>, EngineError> {
        let Some(obs) = obs else { return Ok(None) };
        let live = live_features(obs);
        if let Some((seeds, heading)) = self.pending_init.take() {
            match self.localiser.initialise(&self.graph, &seeds, heading, &live, t) {
                Ok(fix) => {
                    self.event(Event::Localised {
                        keyframe: fix.keyframe_id.0,
                        inliers: fix.inliers,
                    });
                    return Ok(Some(TickOutput {
                        fix: Some(fix),
                        inliers: fix.inliers,
                        lost_event: false,
                        reseeded: false,
                    }));
                }
                Err(e) => {
                    self.event(Event::LocalisationInitFailed { reason: e.to_string() });
                    return Ok(None);
                }
            }
        }
        if self.mode == Mode::Teach || !self.localiser.is_initialised() {
            return Ok(None);
        }
        let out = self.localiser.tick(&self.graph, vo, &live, t)?;
        if out.lost_event {
            self.event(Event::LocalisationLost);
        }
        if out.reseeded {
            self.event(Event::Reseeded);
        }
        Ok(Some(out))
    }

    fn teleop_setpoint(&self, t: f64) -> Command {
        match self.teleop {
            Some((c, at)) if t - at <= self.scenario.runtime.teleop_timeout + 1e-9 => c,
            _ => Command::STOP,
        }
    }

    fn teach_tick(&mut self, vo: &Pose2, obs: &CameraObservation) -> Result<(), EngineError> {
        let calendar = self.calendar();
        let origin = self.sim.state.pose;
        let cfg = self.scenario.teach;
        let Some(session) = self.teach.as_mut() else { return Ok(()) };
        match session.teacher.as_mut() {
            Some(teacher) => {
                teacher.tick(&mut self.graph, vo, obs)?;
            }
            None => {
                let label = session.from.clone();
                let teacher = Teacher::start(&mut self.graph, cfg, calendar, label, origin, obs)?;
                let experience = teacher.experience();
                let from = session.from.clone();
                session.teacher = Some(teacher);
                self.event(Event::TeachStarted { experience, from });
            }
        }
        Ok(())
    }

    fn nav_tick(&mut self, loc: Option<TickOutput>) -> Command {
        let lost = self.localiser.is_lost();
        let pose = self.localiser.pose_in_experience();
        let limit = self.decision.speed_limit;
        let Some(nav) = self.nav.as_mut() else { return Command::STOP };
        let pose = pose.filter(|(e, _)| *e == nav.experience).map(|(_, p)| p);
        let (cmd, status) = nav.controller.tick(pose, lost, limit, DT);
        nav.ticks += 1;
        match loc.and_then(|o| o.fix) {
            Some(f) => nav.inlier_sum += f.inliers as u64,
            None => nav.failed += 1,
        }
        nav.lost_events += u32::from(loc.is_some_and(|o| o.lost_event));
        nav.state = status.state;
        nav.along = status.along_track;
        cmd
    }

    fn dock_tick(&mut self, scan: &LidarScan, vo: &Pose2, t: f64) -> Command {
        let rt = self.scenario.runtime;
        let Some(d) = self.dock.as_mut() else { return Command::STOP };
        match d.stage {
            DockStage::Undock { reversed, turned } => {
                d.controller.dead_reckon(vo);
                let reversed = reversed + (-vo.x).max(0.0);
                let turned = turned + vo.theta;
                d.stage = DockStage::Undock { reversed, turned };
                if reversed < rt.undock_distance {
                    Command::new(-rt.undock_speed, 0.0)
                } else if (std::f64::consts::PI - turned).abs() > 0.01 {
                    Command::new(0.0, (1.5 * (std::f64::consts::PI - turned)).clamp(-0.8, 0.8))
                } else {
                    self.dock = None;
                    self.node = self.dock_node();
                    self.set_mode(Mode::Idle);
                    Command::STOP
                }
            }
            DockStage::Approach => {
                let fix = d.controller.perceive(scan);
                let (cmd, events) = d.controller.tick(fix.as_ref(), vo, DT);
                let docked = d.controller.phase() == DockingPhase::Docked;
                if docked {
                    d.stage = DockStage::Docked { since: t };
                }
                for e in events {
                    match e {
                        DockingEvent::Phase { to, .. } => self.event(Event::DockingPhase { phase: to }),
                        DockingEvent::Failed => {
                            self.event(Event::DockingFailed);
                            self.dock = None;
                            self.set_mode(Mode::Idle);
                        }
                    }
                }
                cmd
            }
            DockStage::Docked { since } => {
                if t - since + 1e-9 >= rt.charge_delay {
                    let in_zone = self.sim.world.dock.is_some_and(|p| p.in_charging_zone(&self.sim.state.pose));
                    self.dock = None;
                    if in_zone {
                        self.node = self.dock_node();
                        self.charged = false;
                        self.event(Event::ChargingStarted);
                        self.set_mode(Mode::Charging);
                    } else {
                        self.event(Event::Warning {
                            message: "docked outside the charging zone".into(),
                        });
                        self.event(Event::DockingFailed);
                        self.set_mode(Mode::Idle);
                    }
                }
                Command::STOP
            }
        }
    }

    fn finish_nav(&mut self, outcome: TraversalOutcome) {
        let Some(nav) = self.nav.take() else { return };
        let t = self.sim.t;
        self.samples.push(TraversalSample {
            edge: nav.edge.clone(),
            experience: nav.experience,
            t_end: t,
            ticks: nav.ticks,
            failed_ticks: nav.failed,
            inlier_sum: nav.inlier_sum,
            lost_events: nav.lost_events,
        });
        if outcome == TraversalOutcome::Completed {
            self.node = Some(nav.step.to.clone());
        } else {
            self.node = None;
        }
        self.event(Event::TraversalFinished {
            mission: nav.mission,
            edge: nav.edge,
            from: nav.step.from,
            to: nav.step.to,
            experience: nav.experience,
            t_start: nav.t_start,
            t_end: t,
            outcome,
            distance: nav.distance,
            ticks: nav.ticks,
            failed_ticks: nav.failed,
            inlier_sum: nav.inlier_sum,
            lost_events: nav.lost_events,
        });
    }

    fn start_nav(&mut self, step: Step, mission: Option<String>) -> Result<(), EngineError> {
        let e = self.supergraph.edges.get(step.edge).ok_or_else(|| EngineError::Invalid(format!("edge index {}", step.edge)))?;
        let key = e.key();
        let r = e.active().ok_or_else(|| EngineError::Untaught(key.clone()))?.clone();
        let reversed = r.taught_from != step.from;
        let poses = self.graph.chain_poses(r.experience)?;
        let anchor = if reversed { poses.len() - 1 } else { 0 };
        self.localiser.handover(&self.graph, r.experience, anchor)?;
        let controller = RepeatController::new(self.scenario.repeat, &poses, reversed);
        self.event(Event::TraversalStarted {
            mission: mission.clone(),
            edge: key.clone(),
            from: step.from.clone(),
            to: step.to.clone(),
            experience: r.experience,
        });
        self.nav = Some(NavSession {
            controller,
            mission,
            step,
            edge: key,
            experience: r.experience,
            t_start: self.sim.t,
            distance: 0.0,
            ticks: 0,
            failed: 0,
            inlier_sum: 0,
            lost_events: 0,
            state: RepeatState::Following,
            along: 0.0,
        });
        self.set_mode(Mode::Repeat);
        Ok(())
    }

    fn begin_docking(&mut self) -> Result<(), EngineError> {
        let placement = self.dock_placement()?;
        let model = DockModel::from_layout(&placement.layout);
        let mut controller = DockingController::new(self.scenario.docking, model);
        if let Some(robot) = self.localiser.site_estimate() {
            controller.set_estimate(robot.inverse().compose(&placement.pose));
        }
        self.localiser.reset();
        self.dock = Some(DockSession {
            controller,
            stage: DockStage::Approach,
        });
        self.set_mode(Mode::Docking);
        Ok(())
    }

    fn begin_undock(&mut self) -> Result<(), EngineError> {
        let placement = self.dock_placement()?;
        let mut controller = DockingController::new(self.scenario.docking, DockModel::from_layout(&placement.layout));
        controller.set_estimate(placement.layout.docked_pose().inverse());
        self.dock = Some(DockSession {
            controller,
            stage: DockStage::Undock { reversed: 0.0, turned: 0.0 },
        });
        self.set_mode(Mode::Docking);
        Ok(())
    }

    fn log_mission_status(&mut self) {
        let Some(r) = &self.mission else { return };
        let status = r.mission.status;
        if self.logged_status != Some(status) {
            self.logged_status = Some(status);
            let mission = r.mission.id.clone();
            self.event(Event::MissionStatus { mission, status });
        }
    }

    fn mission_tick(&mut self, t: f64) -> Result<(), EngineError> {
        let terminal = self.nav.as_ref().map(|n| n.state).filter(|s| s.is_terminal());
        let mut directives = Vec::new();
        if let Some(runner) = self.mission.as_mut() {
            if self.mission_pending {
                if self.dock.is_none() && self.nav.is_none() {
                    self.mission_pending = false;
                    directives = runner.start(&self.supergraph, t, self.sim.state.battery)?;
                }
            } else if let Some(nav) = self.nav.as_ref().filter(|n| n.mission.is_some()) {
                let report = NavReport {
                    t,
                    battery: self.sim.state.battery,
                    repeat: nav.state,
                    along_track: nav.along,
                };
                if let Some(state) = terminal {
                    self.finish_nav_state(state);
                }
                let runner = self.mission.as_mut().expect("runner present");
                directives = runner.tick(&self.supergraph, &report)?;
            }
        } else if let Some(state) = terminal {
            // A standalone repeat.
            self.finish_nav_state(state);
            self.set_mode(Mode::Idle);
        }
        self.log_mission_status();
        for d in directives {
            self.apply_directive(d)?;
        }
        self.log_mission_status();
        if self.mission.as_ref().is_some_and(|r| r.is_done()) && self.nav.is_none() {
            let r = self.mission.take().expect("checked");
            self.logged_status = None;
            self.history.push(r.mission);
        }
        Ok(())
    }

    fn finish_nav_state(&mut self, state: RepeatState) {
        let outcome = if state == RepeatState::Completed {
            TraversalOutcome::Completed
        } else {
            TraversalOutcome::Aborted
        };
        self.finish_nav(outcome);
    }

    fn apply_directive(&mut self, d: Directive) -> Result<(), EngineError> {
        let id = self.mission.as_ref().map(|r| r.mission.id.clone());
        match d {
            Directive::Traverse(step) => self.start_nav(step, id)?,
            Directive::Capture(ev) => self.event(Event::Capture {
                mission: ev.mission,
                target: ev.target,
            }),
            Directive::ReturnToDock => self.event(Event::ReturnToDock { mission: id.unwrap_or_default() }),
            Directive::Dock => {
                if self.dock_placement().is_ok() {
                    self.begin_docking()?;
                } else {
                    self.set_mode(Mode::Idle);
                }
            }
            Directive::Aborted(_) | Directive::Finished => self.set_mode(Mode::Idle),
        }
        Ok(())
    }

    // ----- commands -----

    pub fn acquire_drive(&mut self, client: &str) -> Result<(), EngineError> {
        match &self.lease {
            Some(h) if h == client => return Ok(()),
            Some(h) => return Err(EngineError::DriveConflict { holder: h.clone() }),
            None => {}
        }
        if !matches!(self.mode, Mode::Idle | Mode::Teleop) {
            return Err(EngineError::Busy {
                action: "take drive control",
                mode: self.mode,
            });
        }
        self.lease = Some(client.to_string());
        self.teleop = None;
        self.event(Event::DriveAcquired { client: client.into() });
        self.set_mode(Mode::Teleop);
        Ok(())
    }

    pub fn release_drive(&mut self, client: &str) -> Result<(), EngineError> {
        self.check_holder(client)?;
        if self.teach.is_some() {
            self.finish_teach(None, None)?;
        }
        self.lease = None;
        self.teleop = None;
        self.event(Event::DriveReleased { client: client.into() });
        if matches!(self.mode, Mode::Teleop | Mode::Teach) {
            self.set_mode(Mode::Idle);
        }
        Ok(())
    }

    pub fn drive_holder(&self) -> Option<&str> {
        self.lease.as_deref()
    }

    fn check_holder(&self, client: &str) -> Result<(), EngineError> {
        match &self.lease {
            Some(h) if h == client => Ok(()),
            Some(h) => Err(EngineError::DriveConflict { holder: h.clone() }),
            None => Err(EngineError::NotHolder(client.into())),
        }
    }

    /// Absolute velocity setpoint; the latest one per tick wins and it
    /// decays to a stop after the teleop timeout.
    pub fn teleop(&mut self, client: &str, v: f64, w: f64) -> Result<(), EngineError> {
        self.check_holder(client)?;
        if !matches!(self.mode, Mode::Teleop | Mode::Teach) {
            return Err(EngineError::Busy { action: "teleop", mode: self.mode });
        }
        if !(v.is_finite() && w.is_finite()) {
            return Err(EngineError::Invalid("teleop: non-finite setpoint".into()));
        }
        let r = &self.scenario.robot;
        self.teleop = Some((Command::new(v, w).clamped(r.v_max, r.w_max), self.sim.t));
        if let Some(t) = self.teach.as_mut() {
            t.trace.push(DriveSample { t: self.sim.t - t.t0, v, w });
        }
        Ok(())
    }

    pub fn start_teach(&mut self, client: &str, from: Option<String>) -> Result<(), EngineError> {
        self.start_teach_session(client, from, None)
    }

    fn start_teach_session(&mut self, client: &str, from: Option<String>, reteach: Option<EdgeScore>) -> Result<(), EngineError> {
        self.check_holder(client)?;
        if self.mode != Mode::Teleop || self.teach.is_some() {
            return Err(EngineError::Busy { action: "start teaching", mode: self.mode });
        }
        if let Some(f) = &from {
            if !self.supergraph.nodes.contains_key(f) {
                return Err(EngineError::UnknownNode(f.clone()));
            }
        }
        self.localiser.reset();
        self.teach = Some(TeachSession {
            teacher: None,
            from,
            reteach,
            t0: self.sim.t,
            trace: Vec::new(),
        });
        self.set_mode(Mode::Teach);
        Ok(())
    }

    /// End the recording; with a destination the experience is assigned to
    /// the supergraph edge `from`-`to`.
    pub fn stop_teach(&mut self, client: &str, to: Option<String>) -> Result<Option<TeachSummary>, EngineError> {
        self.check_holder(client)?;
        if self.teach.is_none() {
            return Err(EngineError::Busy { action: "stop teaching", mode: self.mode });
        }
        let from = self.teach.as_ref().and_then(|s| s.from.clone());
        let r = self.finish_teach(from, to)?;
        self.set_mode(Mode::Teleop);
        Ok(r)
    }

    fn finish_teach(&mut self, from: Option<String>, to: Option<String>) -> Result<Option<TeachSummary>, EngineError> {
        let Some(mut session) = self.teach.take() else { return Ok(None) };
        self.last_trace = std::mem::take(&mut session.trace);
        let Some(teacher) = session.teacher else { return Ok(None) };
        let experience = teacher.experience();
        let path = teacher.finish(&mut self.graph)?;
        let length = path.length();
        let keyframes = path.keyframes.len();
        let mut edge = None;
        let mut reteach = false;
        if let (Some(f), Some(t)) = (from.clone(), to.clone()) {
            if !self.supergraph.nodes.contains_key(&t) {
                return Err(EngineError::UnknownNode(t));
            }
            if keyframes >= 2 && f != t {
                let key = edge_key(&f, &t);
                let old = self.graph.active_experience(&key);
                self.supergraph.add_experience(&f, &t, length, experience, &self.graph)?;
                match old {
                    Some(_) => {
                        self.graph.replace_experience(&key, experience)?;
                    }
                    None => self.graph.bind_edge(&key, experience)?,
                }
                if let (Some(score), Some(old)) = (session.reteach, old) {
                    reteach = true;
                    self.event(Event::Reteach {
                        edge: key.clone(),
                        loss_rate: score.loss_rate,
                        mean_inliers: score.mean_inliers,
                        old_experience: old,
                        new_experience: experience,
                    });
                }
                edge = Some(key);
                self.node = Some(t.clone());
            }
        }
        if let Some(&last) = path.keyframes.last() {
            self.localiser.place(&self.graph, last, Pose2::IDENTITY)?;
        }
        self.event(Event::TeachFinished {
            experience,
            keyframes,
            length,
            from,
            to,
            edge: edge.clone(),
            reteach,
        });
        Ok(Some(TeachSummary {
            experience,
            keyframes,
            length,
            edge,
        }))
    }

    /// Start a re-teach of a recommended edge (operator drives it next).
    pub fn start_reteach(&mut self, client: &str, score: EdgeScore, from: String) -> Result<(), EngineError> {
        self.start_teach_session(client, Some(from), Some(score))
    }

    /// Edges to re-teach, scored on traversals of their active experience.
    pub fn reteach_candidates(&self) -> Vec<EdgeScore> {
        let current: Vec<TraversalSample> = self
            .samples
            .iter()
            .filter(|s| self.supergraph.edge(&s.edge).and_then(|e| e.active()).is_some_and(|r| r.experience == s.experience))
            .cloned()
            .collect();
        crate::mission::recommend_reteach(&current, &self.scenario.reteach)
    }

    fn mission_view(&self, m: &Mission) -> MissionView {
        let length = m.route_length(&self.supergraph);
        MissionView {
            id: m.id.clone(),
            status: m.status,
            start: m.start.clone(),
            targets: m.targets.clone(),
            tour: m.tour.clone(),
            route: m
                .route
                .iter()
                .map(|s| (self.supergraph.edges[s.edge].key(), s.from.clone(), s.to.clone()))
                .collect(),
            length,
            energy_estimate: length * self.energy_per_metre(),
            captures: m.captures.iter().map(|c| c.target.clone()).collect(),
        }
    }

    fn mission_start_node(&self) -> Result<String, EngineError> {
        if self.mode == Mode::Charging {
            return self.dock_node().ok_or_else(|| EngineError::Invalid("no dock node".into()));
        }
        self.node.clone().ok_or_else(|| EngineError::Invalid("robot is not at a known node".into()))
    }

    /// Plan without dispatching.
    pub fn preview(&self, targets: &[String]) -> Result<MissionView, EngineError> {
        let start = self.mission_start_node()?;
        let m = plan_tour(&self.supergraph, "preview", &start, targets)?;
        Ok(self.mission_view(&m))
    }

    pub fn dispatch(&mut self, targets: &[String], id: Option<String>) -> Result<MissionView, EngineError> {
        if self.is_busy() || !matches!(self.mode, Mode::Idle | Mode::Charging) {
            return Err(EngineError::Busy {
                action: "dispatch a mission",
                mode: self.mode,
            });
        }
        if targets.is_empty() {
            return Err(EngineError::Invalid("mission needs at least one target".into()));
        }
        let start = self.mission_start_node()?;
        self.mission_seq += 1;
        let id = id.unwrap_or_else(|| format!("M{:04}", self.mission_seq));
        let mission = plan_tour(&self.supergraph, id, &start, targets)?;
        let view = self.mission_view(&mission);
        self.event(Event::MissionPlanned {
            mission: view.id.clone(),
            targets: view.targets.clone(),
            tour: view.tour.clone(),
            length: view.length,
        });
        self.mission = Some(MissionRunner::new(mission, self.scenario.mission, self.energy_per_metre()));
        self.mission_pending = true;
        self.log_mission_status();
        if self.mode == Mode::Charging {
            self.begin_undock()?;
        }
        Ok(view)
    }

    pub fn abort_mission(&mut self) -> Result<(), EngineError> {
        let Some(mut runner) = self.mission.take() else {
            return Err(EngineError::Invalid("no active mission".into()));
        };
        if self.nav.is_some() {
            self.finish_nav(TraversalOutcome::Aborted);
        }
        if runner.mission.status.may_become(MissionStatus::Aborted) {
            runner.mission.set_status(MissionStatus::Aborted)?;
        } else if !matches!(runner.mission.status, MissionStatus::Completed | MissionStatus::Aborted) {
            runner.mission.status = MissionStatus::Aborted;
        }
        self.event(Event::MissionStatus {
            mission: runner.mission.id.clone(),
            status: runner.mission.status,
        });
        self.logged_status = None;
        self.mission_pending = false;
        self.history.push(runner.mission);
        if self.dock.is_some() && self.mode == Mode::Docking {
            self.dock = None;
        }
        if matches!(self.mode, Mode::Repeat | Mode::Docking) {
            self.set_mode(Mode::Idle);
        }
        Ok(())
    }

    pub fn start_repeat(&mut self, from: &str, to: &str) -> Result<(), EngineError> {
        if self.is_busy() || self.mode != Mode::Idle {
            return Err(EngineError::Busy { action: "repeat", mode: self.mode });
        }
        let edge = self
            .supergraph
            .edge_index(from, to)
            .ok_or_else(|| EngineError::Untaught(edge_key(from, to)))?;
        self.start_nav(
            Step {
                edge,
                from: from.into(),
                to: to.into(),
            },
            None,
        )
    }

    pub fn start_docking(&mut self) -> Result<(), EngineError> {
        if self.is_busy() || self.mode != Mode::Idle {
            return Err(EngineError::Busy { action: "dock", mode: self.mode });
        }
        self.begin_docking()
    }

    /// Manual initialisation from a node code (its anchors) or a site
    /// position (keyframes within 3 m), with an optional heading.
    pub fn initialise(&mut self, node: Option<&str>, position: Option<Point2>, heading: Option<f64>) -> Result<(), EngineError> {
        let seeds: Vec<KeyframeId> = match (node, position) {
            (Some(code), _) => self
                .supergraph
                .nodes
                .get(code)
                .ok_or_else(|| EngineError::UnknownNode(code.into()))?
                .anchors
                .clone(),
            (None, Some(p)) => self.keyframes_near(p, 3.0),
            (None, None) => return Err(EngineError::Invalid("initialise needs a node or a position".into())),
        };
        if seeds.is_empty() {
            return Err(EngineError::Invalid("no keyframes near the requested seed".into()));
        }
        self.pending_init = Some((seeds, heading));
        Ok(())
    }

    fn keyframes_near(&self, p: Point2, radius: f64) -> Vec<KeyframeId> {
        let mut out = Vec::new();
        for exp in self.graph.experiences() {
            let Ok(chain) = self.graph.chain_poses(exp.id) else { continue };
            for (k, c) in exp.keyframes.iter().zip(chain) {
                if exp.origin.compose(&c).translation().distance(p) <= radius {
                    out.push(*k);
                }
            }
        }
        out.sort();
        out
    }

    /// The operator picks the robot up and puts it down somewhere.
    pub fn carry(&mut self, to: &Start) -> Result<(), EngineError> {
        if self.nav.is_some() || self.teach.is_some() || self.mission.is_some() {
            return Err(EngineError::Busy { action: "carry the robot", mode: self.mode });
        }
        let (pose, node, docked) = match to {
            Start::Docked => {
                let p = self.dock_placement()?;
                (p.docked_pose_world(), self.dock_node(), true)
            }
            Start::Pose(p) => (*p, None, false),
            Start::Node { code, heading } => {
                let n = self.supergraph.nodes.get(code).ok_or_else(|| EngineError::UnknownNode(code.clone()))?;
                (Pose2::new(n.position.x, n.position.y, *heading), Some(code.clone()), false)
            }
        };
        self.dock = None;
        self.cmd = Command::STOP;
        self.teleop = None;
        self.sim.teleport(pose);
        self.localiser.reset();
        self.node = node;
        self.event(Event::OperatorCarry { to: pose });
        if docked {
            self.charged = false;
            self.set_mode(Mode::Charging);
        } else if self.mode != Mode::Teleop {
            self.set_mode(Mode::Idle);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = &self.sim.state;
        Snapshot {
            stamp: self.sim.t,
            calendar: self.calendar(),
            mode: self.mode,
            pose: s.pose,
            estimate: self.localiser.site_estimate(),
            localised: self.localiser.site_estimate().is_some() && !self.localiser.is_lost(),
            inliers: self.inliers,
            lost: self.localiser.is_lost(),
            speed_limit: self.decision.speed_limit,
            estop: self.decision.estop,
            battery: s.battery,
            battery_fraction: s.battery / self.scenario.robot.battery.capacity,
            odometer: s.odometer,
            node: self.node.clone(),
            edge: self.nav.as_ref().map(|n| n.edge.clone()),
            along_track: self.nav.as_ref().map(|n| n.along),
            mission: self.mission.as_ref().map(|r| self.mission_view(&r.mission)),
            drive_holder: self.lease.clone(),
            docking_phase: self.docking_phase(),
            teach: self.teach.as_ref().map(|t| TeachView {
                experience: t.teacher.as_ref().map(|x| x.experience()),
                keyframes: t
                    .teacher
                    .as_ref()
                    .and_then(|x| self.graph.experience(x.experience()))
                    .map_or(0, |e| e.keyframes.len()),
                from: t.from.clone(),
            }),
        }
    }

    pub fn save_map(&self, dir: &Path) -> Result<(), EngineError> {
        std::fs::create_dir_all(dir)?;
        crate::graph::save(&self.graph, &dir.join("map.fnm"))?;
        self.supergraph.save(&dir.join("supergraph.json"))?;
        Ok(())
    }
}
