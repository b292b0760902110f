#![allow(dead_code)]

use fieldnav::docking::{DockModel, DockingConfig, DockingController, DockingPhase};
use fieldnav::geometry::{angle_diff, Point2, Pose2, Rect};
use fieldnav::localisation::vo::{Odometry, VoNoise};
use fieldnav::sim::{stream_rng, DockLayout, DockPlacement, SimConfig, Simulator, Stream, WorldConfig, DT};

pub fn dock_world(dock: Pose2) -> WorldConfig {
    WorldConfig {
        bounds: Rect::new(Point2::new(-20.0, -20.0), Point2::new(20.0, 20.0)),
        descriptor_dim: 16,
        landmark_zones: Vec::new(),
        landmarks: Vec::new(),
        obstacles: Vec::new(),
        agents: Vec::new(),
        dock: Some(DockPlacement {
            pose: dock,
            layout: DockLayout::default(),
        }),
        plots: Some(Vec::new()),
        plot_count: 0,
    }
}

#[derive(Debug, Clone)]
pub struct DockRun {
    pub phase: DockingPhase,
    /// Final (position, heading) error against the true docked pose.
    pub error: (f64, f64),
    /// True distance to the docked pose after every tick.
    pub distances: Vec<f64>,
    pub fixes: Vec<Option<Pose2>>,
}

/// Closed-loop docking against the simulated LiDAR. `start` is in the
/// dock frame; the dock sits at `dock` in the world.
pub fn run_docking(seed: u64, dock: Pose2, start: Pose2, noisy: bool, max_time: f64) -> DockRun {
    let mut cfg = SimConfig {
        world: dock_world(dock),
        robot: Default::default(),
        camera: Default::default(),
        lidar: Default::default(),
    };
    if !noisy {
        cfg.robot = cfg.robot.noiseless();
        cfg.lidar = cfg.lidar.noiseless();
    }
    let layout = DockLayout::default();
    let mut sim = Simulator::new(cfg, None, seed, dock.compose(&start), None).expect("world");
    let mut odo = Odometry::new(if noisy { VoNoise::default() } else { VoNoise::ZERO });
    let mut odo_rng = stream_rng(seed, Stream::Odometry);
    let mut ctl = DockingController::new(DockingConfig::default(), DockModel::from_layout(&layout));
    let target = dock.compose(&layout.docked_pose());
    let mut delta = Pose2::IDENTITY;
    let mut distances = Vec::new();
    let mut fixes = Vec::new();
    let ticks = (max_time / DT) as usize;
    for _ in 0..ticks {
        let scan = sim.sense_lidar();
        let fix = ctl.perceive(&scan);
        fixes.push(fix.map(|f| f.dock_pose));
        let (cmd, _) = ctl.tick(fix.as_ref(), &delta, DT);
        if matches!(ctl.phase(), DockingPhase::Docked | DockingPhase::Failed) {
            break;
        }
        let before = sim.state.pose;
        sim.step(cmd, DT);
        let truth = before.inverse().compose(&sim.state.pose);
        delta = odo.step(&truth, &mut odo_rng).delta;
        distances.push(sim.state.pose.translation().distance(target.translation()));
    }
    let p = sim.state.pose;
    DockRun {
        phase: ctl.phase(),
        error: (
            p.translation().distance(target.translation()),
            angle_diff(p.theta, target.theta).abs(),
        ),
        distances,
        fixes,
    }
}

use fieldnav::geometry::point_segment_distance;
use fieldnav::graph::KeyframeId;
use fieldnav::runtime::{Director, Mode, Scenario, TelemetryWriter};
use std::collections::BTreeSet;

pub fn scenario(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).expect("shipped scenario loads")
}

/// Ground truth gathered while a scripted teach-then-repeat runs.
#[derive(Debug, Default)]
pub struct Track {
    pub taught: Vec<Point2>,
    pub repeated: Vec<Point2>,
    /// One flag per repeated position: a fresh fix on that tick.
    pub fresh: Vec<bool>,
    /// Keyframe positions in the site frame.
    pub keyframe_positions: Vec<Point2>,
    /// Keyframes matched by a fresh fix during REPEAT.
    pub fixed: BTreeSet<KeyframeId>,
    pub keyframes: Vec<KeyframeId>,
    pub taught_length: f64,
    pub autonomous_m: f64,
}

impl Track {
    /// Whether the repeat had a fresh fix on the tick it came closest to
    /// each keyframe; one entry per keyframe.
    pub fn fix_at_keyframes(&self) -> Vec<bool> {
        self.keyframe_positions
            .iter()
            .map(|k| {
                let nearest = self
                    .repeated
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.distance(*k).total_cmp(&b.1.distance(*k)))
                    .map(|(i, _)| i);
                nearest.is_some_and(|i| self.fresh[i])
            })
            .collect()
    }

    /// Largest distance from a repeated position to the taught polyline.
    pub fn max_cross_track(&self) -> f64 {
        self.repeated
            .iter()
            .map(|p| {
                self.taught
                    .windows(2)
                    .map(|w| point_segment_distance(*p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

pub fn track(scenario: Scenario) -> Track {
    let mut d = Director::new(scenario, TelemetryWriter::sink()).expect("engine");
    let mut tr = Track::default();
    while !d.is_finished() {
        d.step().expect("tick");
        let e = &d.engine;
        let p = e.sim().state.pose.translation();
        match e.mode() {
            Mode::Teach => {
                if let Some(q) = tr.taught.last() {
                    tr.taught_length += p.distance(*q);
                }
                tr.taught.push(p);
            }
            Mode::Repeat => {
                tr.repeated.push(p);
                let fix = e.localiser().last_fix().filter(|f| (f.stamp - e.t()).abs() < 1e-9);
                tr.fresh.push(fix.is_some());
                if let Some(f) = fix {
                    tr.fixed.insert(f.keyframe_id);
                }
            }
            _ => {}
        }
    }
    let g = d.engine.graph();
    if let Some(exp) = g.experiences().next() {
        tr.keyframes = exp.keyframes.clone();
        let chain = g.chain_poses(exp.id).expect("chain");
        tr.keyframe_positions = chain.iter().map(|p| exp.origin.compose(p).translation()).collect();
    }
    tr.autonomous_m = d.engine.finish().expect("finish").autonomous_m;
    tr
}

/// In-memory telemetry sink that can be read back after the writer is gone.
#[derive(Clone, Default)]
pub struct SharedBuf(pub std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn text(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).expect("utf8 log")
    }
}

impl std::io::Write for SharedBuf {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
