//! Acceptance suite. Runs every headline criterion at its stated tolerance
//! and prints one PASS/FAIL line per criterion; exits non-zero on any FAIL.

mod common;

use common::SharedBuf;
use std::io::Write;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use fieldnav::docking::{DockModel, DockingConfig, DockingController, DockingPhase};
use fieldnav::geometry::{angle_diff, Point2, Pose2, Rect};
use fieldnav::graph::ExperienceId;
use fieldnav::mission::{plan_tour, shortest_path, ExperienceRef, SgEdge, Supergraph};
use fieldnav::runtime::replay::perceive_scans;
use fieldnav::runtime::{run_scenario, stats_from_text, Action, Director, Engine, Mode, Scenario, StatsConfig, TelemetryWriter};
use fieldnav::safety::{cluster_points, cluster_scan, decide, SafetyConfig, Zone};
use fieldnav::sim::{
    stream_rng, Command, DockLayout, DockPlacement, LidarConfig, Obstacle, SimConfig, Simulator, Stream, WorldConfig, DT,
};
use fieldnav::teach_repeat::ControllerKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

// ---------------------------------------------------------------- geometry

type Mat = [[f64; 3]; 3];

fn mat(p: &Pose2) -> Mat {
    let (s, c) = p.theta.sin_cos();
    [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Closed-form inverse of a rigid transform matrix: [Rᵀ, -Rᵀt].
fn inv(a: &Mat) -> Mat {
    let (c, s, x, y) = (a[0][0], a[1][0], a[0][2], a[1][2]);
    [[c, s, -(c * x + s * y)], [-s, c, s * x - c * y], [0.0, 0.0, 1.0]]
}

fn same(p: &Pose2, m: &Mat, tol: f64) -> bool {
    (p.x - m[0][2]).abs() <= tol && (p.y - m[1][2]).abs() <= tol && angle_diff(p.theta, m[1][0].atan2(m[0][0])).abs() <= tol
}

fn geometry_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pose = |rng: &mut ChaCha8Rng| {
        Pose2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-4.0 * PI..4.0 * PI))
    };
    let tol = 1e-9;
    let mut bad = 0;
    let n = 10_000;
    for _ in 0..n {
        let (a, b, c) = (pose(&mut rng), pose(&mut rng), pose(&mut rng));
        let p = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let (ma, mb, mc) = (mat(&a), mat(&b), mat(&c));
        let ok = same(&a.compose(&b), &mul(&ma, &mb), tol)
            && same(&a.compose(&b).compose(&c), &mul(&mul(&ma, &mb), &mc), tol)
            && same(&a.compose(&b.compose(&c)), &mul(&ma, &mul(&mb, &mc)), tol)
            && a.compose(&Pose2::IDENTITY).approx_eq(&a, tol, tol)
            && Pose2::IDENTITY.compose(&a).approx_eq(&a, tol, tol)
            && same(&a.inverse(), &inv(&ma), tol)
            && a.compose(&a.inverse()).approx_eq(&Pose2::IDENTITY, tol, tol)
            && a.inverse().compose(&a).approx_eq(&Pose2::IDENTITY, tol, tol)
            && same(&a.between(&b), &mul(&inv(&ma), &mb), tol)
            && {
                let q = a.transform_point(p);
                let qx = ma[0][0] * p.x + ma[0][1] * p.y + ma[0][2];
                let qy = ma[1][0] * p.x + ma[1][1] * p.y + ma[1][2];
                (q.x - qx).abs() <= tol && (q.y - qy).abs() <= tol && a.inverse_transform_point(q).distance(p) <= tol
            };
        bad += usize::from(!ok);
    }
    outcome("geometry: SE(2) group laws vs matrix oracle", bad == 0, format!("{bad}/{n} cases outside 1e-9"))
}

// ----------------------------------------------------------------- routing

fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Supergraph {
    let names: Vec<String> = (0..n).map(|i| format!("N{i:02}")).collect();
    let mut g = Supergraph::new(names[0].clone());
    for name in &names {
        g.add_node(name.clone(), Point2::ORIGIN, None);
    }
    let push = |g: &mut Supergraph, a: usize, b: usize, rng: &mut ChaCha8Rng| {
        if a == b || g.edge_index(&names[a], &names[b]).is_some() {
            return;
        }
        let id = g.edges.len() as u32;
        g.edges.push(SgEdge {
            a: names[a].clone(),
            b: names[b].clone(),
            length: rng.random_range(1.0..100.0),
            experiences: vec![ExperienceRef {
                experience: ExperienceId(id),
                taught_from: names[a].clone(),
            }],
        });
    };
    // A random spanning tree keeps the graph connected.
    for i in 1..n {
        let j = rng.random_range(0..i);
        push(&mut g, i, j, rng);
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        push(&mut g, a, b, rng);
    }
    g
}

fn node_index(g: &Supergraph) -> BTreeMap<String, usize> {
    g.nodes.keys().enumerate().map(|(i, k)| (k.clone(), i)).collect()
}

fn floyd_warshall(g: &Supergraph) -> Vec<Vec<f64>> {
    let idx = node_index(g);
    let n = idx.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &g.edges {
        let (a, b) = (idx[&e.a], idx[&e.b]);
        d[a][b] = d[a][b].min(e.length);
        d[b][a] = d[b][a].min(e.length);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn routing_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    let mut pairs = 0;
    for gi in 0..50 {
        let mut g = random_graph(&mut rng, 30, 30);
        if gi % 10 == 9 {
            // An unreachable island.
            g.add_node("ZZ", Point2::ORIGIN, None);
        }
        let d = floyd_warshall(&g);
        let idx = node_index(&g);
        for (a, &i) in &idx {
            for (b, &j) in &idx {
                pairs += 1;
                match shortest_path(&g, a, b) {
                    Ok(r) => {
                        let walked: f64 = r.edges.iter().map(|&e| g.edges[e].length).sum();
                        let chained = r.nodes.windows(2).zip(&r.edges).all(|(w, &e)| g.edges[e].other(&w[0]) == Some(w[1].as_str()));
                        let ends = r.nodes.first() == Some(a) && r.nodes.last() == Some(b);
                        if !(d[i][j].is_finite() && (r.length - d[i][j]).abs() <= 1e-9 && (walked - r.length).abs() <= 1e-9 && chained && ends) {
                            bad += 1;
                        }
                    }
                    Err(_) => bad += usize::from(d[i][j].is_finite()),
                }
            }
        }
    }
    outcome(
        "routing: shortest_path equals Floyd-Warshall (50 graphs x 30 nodes)",
        bad == 0,
        format!("{bad}/{pairs} pairs disagree"),
    )
}

fn permutations_min(d: &[Vec<f64>], start: usize, targets: &[usize]) -> f64 {
    let mut t = targets.to_vec();
    let mut best = f64::INFINITY;
    heap_permute(&mut t, targets.len(), &mut |p| {
        let mut s = 0.0;
        let mut prev = start;
        for &x in p {
            s += d[prev][x];
            prev = x;
        }
        best = best.min(s);
    });
    best
}

fn heap_permute(a: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        f(a);
        return;
    }
    for i in 0..k {
        heap_permute(a, k - 1, f);
        let j = if k.is_multiple_of(2) { i } else { 0 };
        a.swap(j, k - 1);
    }
}

fn tour_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let mut instances = 0;
    for _ in 0..25 {
        let g = random_graph(&mut rng, 20, 15);
        let d = floyd_warshall(&g);
        let idx = node_index(&g);
        let names: Vec<String> = idx.keys().cloned().collect();
        for k in 1..=8 {
            let mut pool: Vec<usize> = (0..names.len()).collect();
            pool.shuffle(&mut rng);
            let start = pool[0];
            let targets: Vec<usize> = pool[1..=k].to_vec();
            let tnames: Vec<String> = targets.iter().map(|&i| names[i].clone()).collect();
            instances += 1;
            let Ok(m) = plan_tour(&g, "t", &names[start], &tnames) else {
                bad += 1;
                continue;
            };
            let mut prev = start;
            let mut len = 0.0;
            for t in &m.tour {
                len += d[prev][idx[t]];
                prev = idx[t];
            }
            let opt = permutations_min(&d, start, &targets);
            let visits: BTreeSet<&String> = m.tour.iter().collect();
            let covers = visits.len() == k && tnames.iter().all(|t| visits.contains(t));
            if !(covers && (len - opt).abs() <= 1e-9 && (m.route_length(&g) - opt).abs() <= 1e-9) {
                bad += 1;
            }
        }
    }
    outcome(
        "routing: plan_tour equals exhaustive permutation (25 graphs, 1..8 targets)",
        bad == 0,
        format!("{bad}/{instances} instances differ"),
    )
}

fn graph_suite() -> Vec<Outcome> {
    let t = Instant::now();
    let mut v = vec![geometry_laws(), routing_oracle(), tour_oracle()];
    let took = t.elapsed();
    v.push(outcome(
        "routing: geometry and graph oracles finish within 30 s",
        took < Duration::from_secs(30),
        format!("{:.2} s", took.as_secs_f64()),
    ));
    v
}

// ------------------------------------------------------------ localisation

fn zero_noise_repeat() -> Vec<Outcome> {
    let tr = common::track(common::scenario("straight_100m.json"));
    let at = tr.fix_at_keyframes();
    let missing: Vec<usize> = at.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i).collect();
    let matched = tr.keyframes.iter().filter(|k| tr.fixed.contains(k)).count();
    let xt = tr.max_cross_track();
    vec![
        outcome(
            "localisation: zero-noise 100 m repeat fixes at every keyframe",
            missing.is_empty() && !at.is_empty() && tr.taught_length >= 99.0,
            format!(
                "{} keyframes, no fix when passing {missing:?}; {matched} matched directly; taught {:.2} m",
                at.len(),
                tr.taught_length
            ),
        ),
        outcome(
            "localisation: zero-noise 100 m repeat max cross-track < 0.05 m (pure pursuit)",
            xt < 0.05,
            format!("max cross-track {xt:.4} m"),
        ),
    ]
}

/// Mean inliers over the first `n` REPEAT ticks of each repeat in the run.
fn repeat_inliers(scenario: Scenario, n: usize) -> Vec<f64> {
    let mut d = Director::new(scenario, TelemetryWriter::sink()).expect("engine");
    let mut runs: Vec<Vec<f64>> = Vec::new();
    let mut prev = Mode::Idle;
    while !d.is_finished() {
        d.step().expect("tick");
        let mode = d.engine.mode();
        if mode == Mode::Repeat {
            if prev != Mode::Repeat {
                runs.push(Vec::new());
            }
            let r = runs.last_mut().unwrap();
            if r.len() < n {
                r.push(d.engine.snapshot().inliers as f64);
            }
        }
        prev = mode;
    }
    runs.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
}

fn persistence_halves_inliers() -> Outcome {
    // Every landmark decays with the same half-life; the second repeat runs
    // one half-life after teaching, when each is seen with probability 0.5.
    let half_life = 1.0e6;
    let mut s = common::scenario("straight_100m.json");
    s.seed = 11;
    s.runtime.accel = 100.0;
    s.world.landmark_zones[0].populations[0].half_life = Some(half_life);
    let repeat = s.script[1].clone();
    s.script.push(Action::Wait {
        seconds: half_life / s.runtime.accel,
    });
    s.script.push(repeat);
    let m = repeat_inliers(s, 100);
    let ratio = m.get(1).copied().unwrap_or(0.0) / m.first().copied().unwrap_or(f64::NAN);
    outcome(
        "localisation: persistence 0.5 halves mean inliers within 10% (100 ticks)",
        m.len() == 2 && (0.45..=0.55).contains(&ratio),
        format!("mean inliers {m:.1?}, ratio {ratio:.3}"),
    )
}

fn lost_after_n_failures() -> Outcome {
    // Landmarks stop at x = 12; the repeat runs on into the bare stretch.
    let mut s = common::scenario("straight_100m.json");
    s.world.landmark_zones[0].region = serde_json::from_value(serde_json::json!({
        "rect": {"min": {"x": -5.0, "y": -4.0}, "max": {"x": 12.0, "y": 4.0}}
    }))
    .unwrap();
    let n_lost = s.localiser.n_lost;
    let mut d = Director::new(s, TelemetryWriter::sink()).expect("engine");
    d.engine.enable_outbox();
    let (mut streak, mut expected, mut got, mut repeat_ticks) = (0u32, Vec::new(), Vec::new(), 0usize);
    while !d.is_finished() {
        d.step().expect("tick");
        let e = &mut d.engine;
        let lost: bool = e.drain_outbox().iter().any(|r| r.event.tag() == "localisation_lost");
        if e.mode() != Mode::Repeat && !lost {
            streak = 0;
            continue;
        }
        repeat_ticks += 1;
        let fixed = e.localiser().last_fix().is_some_and(|f| (f.stamp - e.t()).abs() < 1e-9);
        streak = if fixed { 0 } else { streak + 1 };
        if streak == n_lost {
            expected.push(repeat_ticks);
        }
        if lost {
            got.push(repeat_ticks);
        }
    }
    outcome(
        "localisation: LOST emitted exactly after N_lost consecutive failures",
        !expected.is_empty() && expected == got,
        format!("n_lost {n_lost}; expected at ticks {expected:?}, emitted at {got:?}"),
    )
}

fn tight_turn() -> Outcome {
    let xt = |seed: u64, kind: ControllerKind| {
        let mut s = common::scenario("tight_turn.json");
        s.seed = seed;
        s.repeat.controller = kind;
        common::track(s).max_cross_track()
    };
    let mut ratios = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (ho, pp) = (xt(seed, ControllerKind::HeadingOnly), xt(seed, ControllerKind::PurePursuit));
        ratios.push(ho / pp);
        detail.push(format!("{ho:.3}/{pp:.3}"));
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        "controller: heading-only max cross-track >= 3x pure pursuit on the tight turn (10 seeds)",
        worst >= 3.0,
        format!("worst ratio {worst:.2}; HO/PP metres {}", detail.join(" ")),
    )
}

// ------------------------------------------------------------------ safety

fn bare_world(obstacles: Vec<Obstacle>, dock: Option<DockPlacement>) -> WorldConfig {
    WorldConfig {
        bounds: Rect::new(Point2::new(-30.0, -30.0), Point2::new(30.0, 30.0)),
        descriptor_dim: 16,
        landmark_zones: Vec::new(),
        landmarks: Vec::new(),
        obstacles,
        agents: Vec::new(),
        dock,
        plots: Some(Vec::new()),
        plot_count: 0,
    }
}

fn inside_polygon(p: Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y) {
            inside = !inside;
        }
    }
    inside
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o = |p: Point2, q: Point2, r: Point2| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

/// Does the robot-frame polygon overlap the zone rectangle?
fn overlaps(poly: &[Point2], z: &Zone) -> bool {
    let rect = [
        Point2::new(-z.behind, -z.half_width),
        Point2::new(z.ahead, -z.half_width),
        Point2::new(z.ahead, z.half_width),
        Point2::new(-z.behind, z.half_width),
    ];
    let in_rect = |p: &Point2| p.x >= -z.behind && p.x <= z.ahead && p.y.abs() <= z.half_width;
    poly.iter().any(in_rect)
        || rect.iter().any(|c| inside_polygon(*c, poly))
        || (0..poly.len()).any(|i| (0..4).any(|j| segments_cross(poly[i], poly[(i + 1) % poly.len()], rect[j], rect[(j + 1) % 4])))
}

/// Chassis radius around the scanner.
const FOOTPRINT: f64 = 0.25;

fn touches_footprint(poly: &[Point2]) -> bool {
    inside_polygon(Point2::ORIGIN, poly)
        || (0..poly.len()).any(|i| fieldnav::geometry::point_segment_distance(Point2::ORIGIN, poly[i], poly[(i + 1) % poly.len()]) < FOOTPRINT)
}

fn random_square(rng: &mut ChaCha8Rng) -> Obstacle {
    let c = Point2::new(rng.random_range(-1.0..5.0), rng.random_range(-2.5..2.5));
    let side: f64 = rng.random_range(0.15..0.6);
    let rot: f64 = rng.random_range(0.0..PI);
    let h = side / 2.0;
    Obstacle {
        polygon: [(-h, -h), (h, -h), (h, h), (-h, h)]
            .iter()
            .map(|&(x, y)| c + Point2::new(x, y).rotate(rot))
            .collect(),
    }
}

fn safety_curtain() -> Outcome {
    let cfg = SafetyConfig::default();
    let (mut missed, mut positives, mut ticks, mut spurious, mut collisions) = (0, 0, 0, 0, 0);
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let obstacles: Vec<Obstacle> = (0..rng.random_range(1..6)).map(|_| random_square(&mut rng)).collect();
        let sim_cfg = SimConfig {
            world: bare_world(obstacles.clone(), None),
            robot: Default::default(),
            camera: Default::default(),
            lidar: Default::default(),
        };
        let mut sim = Simulator::new(sim_cfg, None, k, Pose2::new(-1.5, rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)), None).unwrap();
        for _ in 0..120 {
            // Drive blind so the robot keeps meeting obstacles at every range.
            let cmd = Command::new(rng.random_range(0.2..1.0), rng.random_range(-0.8..0.8));
            sim.step(cmd, DT);
            let pose = sim.state.pose;
            let local: Vec<Vec<Point2>> = obstacles
                .iter()
                .map(|o| o.polygon.iter().map(|p| pose.inverse_transform_point(*p)).collect())
                .collect();
            // Obstacles inside the robot's own footprint are collisions,
            // not detection cases.
            if local.iter().any(|poly| touches_footprint(poly)) {
                collisions += 1;
                continue;
            }
            ticks += 1;
            let scan = sim.sense_lidar();
            let decision = decide(&cluster_scan(&scan, cfg.min_object_size, cfg.max_internal_gap), &cfg);
            let truth = local.iter().any(|poly| overlaps(poly, &cfg.stop_zone));
            positives += usize::from(truth);
            missed += usize::from(truth && !decision.estop);
            let grown = Zone {
                ahead: cfg.stop_zone.ahead + cfg.padding + 0.03,
                behind: cfg.stop_zone.behind + cfg.padding + 0.03,
                half_width: cfg.stop_zone.half_width + cfg.padding + 0.03,
            };
            spurious += usize::from(decision.estop && !local.iter().any(|poly| overlaps(poly, &grown)));
        }
    }
    outcome(
        "safety: zero missed estops over 100 randomized obstacle scenarios",
        missed == 0 && positives > 0,
        format!(
            "{ticks} ticks, {positives} with an obstacle in the stop zone, {missed} missed, {spurious} estops with nothing near the zone, {collisions} collision ticks skipped"
        ),
    )
}

fn sub_size_returns() -> Outcome {
    let cfg = SafetyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lidar = LidarConfig::default();
    let angles = lidar.angles();
    let mut triggered = 0;
    let scans = 10_000;
    for _ in 0..scans {
        // Isolated single returns: each farther than the clustering gap
        // from its neighbours in beam order.
        let mut pts: Vec<(usize, Point2)> = Vec::new();
        let mut beam = rng.random_range(0..4);
        while beam < angles.len() {
            let p = Point2::from_polar(rng.random_range(0.05..2.0), angles[beam]);
            let clear = pts.last().is_none_or(|q| q.1.distance(p) > cfg.max_internal_gap);
            if clear {
                pts.push((beam, p));
            }
            beam += rng.random_range(1..40);
        }
        if let (Some(first), Some(last)) = (pts.first(), pts.last()) {
            if pts.len() > 1 && first.1.distance(last.1) <= cfg.max_internal_gap {
                pts.pop();
            }
        }
        triggered += usize::from(decide(&cluster_points(&pts, cfg.min_object_size, cfg.max_internal_gap), &cfg).estop);
    }
    // Long grass in the simulator: every stop must come from a multi-return object.
    let sim_cfg = SimConfig {
        world: bare_world(Vec::new(), None),
        robot: Default::default(),
        camera: Default::default(),
        lidar: LidarConfig {
            grass_return_probability: 0.01,
            ..Default::default()
        },
    };
    let mut sim = Simulator::new(sim_cfg, None, 9, Pose2::IDENTITY, None).unwrap();
    let mut single = 0;
    for _ in 0..2000 {
        let scan = sim.sense_lidar();
        let clusters = cluster_scan(&scan, cfg.min_object_size, cfg.max_internal_gap);
        let d = decide(&clusters, &cfg);
        single += d.triggering.iter().filter(|id| clusters[**id as usize].points.len() < 2).count();
        sim.step(Command::new(0.5, 0.1), DT);
    }
    outcome(
        "safety: sub-size single-point returns never trigger",
        triggered == 0 && single == 0,
        format!("{triggered}/{scans} synthetic scans stopped; {single} single-return triggers in 2000 grass scans"),
    )
}

// ----------------------------------------------------------------- docking

fn docking_success() -> Outcome {
    let dock = Pose2::new(3.0, -2.0, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let starts: Vec<Pose2> = (0..200)
        .map(|_| Pose2::new(3.5, rng.random_range(-1.0..1.0), PI + rng.random_range(-30f64..30.0).to_radians()))
        .collect();
    let ok = std::thread::scope(|s| {
        let handles: Vec<_> = starts
            .chunks(25)
            .enumerate()
            .map(|(c, chunk)| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .enumerate()
                        .filter(|(i, p)| {
                            let r = common::run_docking((c * 25 + i) as u64, dock, **p, true, 120.0);
                            r.phase == DockingPhase::Docked && r.error.0 <= 0.02 && r.error.1 <= 1f64.to_radians()
                        })
                        .count()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum::<usize>()
    });
    outcome(
        "docking: >= 95% success over 200 capture-region starts within (2 cm, 1 deg)",
        ok >= 190,
        format!("{ok}/200 docked within tolerance"),
    )
}

fn match_recovery() -> Outcome {
    let layout = DockLayout::default();
    let ctl = DockingController::new(DockingConfig::default(), DockModel::from_layout(&layout));
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut ok, mut worst) = (0, (0.0f64, 0.0f64));
    let n = 200usize;
    for k in 0..n as u64 {
        let dock = Pose2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-PI..PI));
        let start = Pose2::new(rng.random_range(2.5..3.5), rng.random_range(-1.0..1.0), PI + rng.random_range(-30f64..30.0).to_radians());
        let robot = dock.compose(&start);
        let sim_cfg = SimConfig {
            world: bare_world(Vec::new(), Some(DockPlacement { pose: dock, layout })),
            robot: Default::default(),
            camera: Default::default(),
            lidar: LidarConfig {
                range_sigma: 0.005,
                ..Default::default()
            },
        };
        let mut sim = Simulator::new(sim_cfg, None, k, robot, None).unwrap();
        let truth = robot.inverse().compose(&dock);
        if let Some(f) = ctl.perceive(&sim.sense_lidar()) {
            let e = (f.dock_pose.distance_to(&truth), angle_diff(f.dock_pose.theta, truth.theta).abs());
            worst = (worst.0.max(e.0), worst.1.max(e.1));
            ok += usize::from(e.0 <= 0.02 && e.1 <= 1f64.to_radians());
        } else {
            worst = (f64::INFINITY, f64::INFINITY);
        }
    }
    outcome(
        "docking: match_dock recovers simulated transforms within (2 cm, 1 deg) at 5 mm noise",
        ok == n,
        format!("{ok}/{n} within tolerance; worst {:.4} m, {:.3} deg", worst.0, worst.1.to_degrees()),
    )
}

fn perception_deterministic() -> Outcome {
    let dock = Pose2::new(-4.0, 1.0, 2.0);
    let start = Pose2::new(3.5, -0.7, PI + 0.4);
    let run = || {
        let r = common::run_docking(77, dock, start, true, 90.0);
        serde_json::to_string(&(r.fixes, r.distances)).unwrap()
    };
    let (a, b) = (run(), run());
    // Offline perception over a recorded scan sequence.
    let sim_cfg = SimConfig {
        world: bare_world(Vec::new(), Some(DockPlacement { pose: dock, layout: DockLayout::default() })),
        robot: Default::default(),
        camera: Default::default(),
        lidar: Default::default(),
    };
    let mut sim = Simulator::new(sim_cfg, None, 5, dock.compose(&start), None).unwrap();
    let scans: Vec<_> = (0..50)
        .map(|_| {
            sim.step(Command::new(0.2, 0.05), DT);
            sim.sense_lidar()
        })
        .collect();
    let offline = || serde_json::to_string(&perceive_scans(&scans, &DockingConfig::default(), &DockLayout::default())).unwrap();
    let (c, d) = (offline(), offline());
    outcome(
        "docking: perception path deterministic (two runs byte-identical)",
        a == b && c == d,
        format!("closed loop {} bytes, offline {} bytes", a.len(), c.len()),
    )
}

// ----------------------------------------------------------------- battery

fn drive_flat_out(robot: fieldnav::sim::RobotConfig) -> f64 {
    let sim_cfg = SimConfig {
        world: bare_world(Vec::new(), None),
        robot,
        camera: Default::default(),
        lidar: Default::default(),
    };
    let mut sim = Simulator::new(sim_cfg, None, 1, Pose2::IDENTITY, None).unwrap();
    while !sim.state.battery_empty && sim.t < 4.0 * 3600.0 {
        sim.step(Command::new(robot.v_max, 0.0), DT);
    }
    sim.t
}

fn endurance() -> Outcome {
    let robot = fieldnav::sim::RobotConfig::default();
    let b = robot.battery;
    let oracle = b.capacity / (b.idle_power + b.k_linear * robot.v_max);
    let noisy = drive_flat_out(robot);
    let exact = drive_flat_out(robot.noiseless());
    let h = noisy / 3600.0;
    outcome(
        "battery: continuous full-speed endurance in [1.6 h, 2.0 h)",
        (1.6..2.0).contains(&h) && (exact - oracle).abs() <= 2.0 * DT,
        format!("{h:.3} h with motion noise, {:.4} h noiseless, {:.4} h from capacity / power", exact / 3600.0, oracle / 3600.0),
    )
}

fn low_battery_missions() -> Outcome {
    let base = common::scenario("mission_ring.json");
    let results: Vec<(bool, bool, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64)
            .map(|chunk| {
                let base = base.clone();
                s.spawn(move || {
                    (chunk * 10..chunk * 10 + 10)
                        .map(|seed| {
                            // Teach the ring, then fly a mission from a low charge.
                            let mut s = base.clone();
                            s.seed = seed;
                            s.script = vec![Action::TeachAll];
                            let mut d = Director::new(s.clone(), TelemetryWriter::sink()).expect("engine");
                            while !d.is_finished() {
                                d.step().expect("tick");
                            }
                            let (g, sg) = (d.engine.graph().clone(), d.engine.supergraph().clone());
                            let mut rng = stream_rng(seed, Stream::Operator);
                            let mut targets = vec!["A".to_string(), "B".to_string(), "C".to_string()];
                            targets.shuffle(&mut rng);
                            targets.truncate(rng.random_range(1..=3));
                            s.initial_battery = Some(rng.random_range(4_000.0..16_000.0));
                            s.start = Some(fieldnav::runtime::Start::Docked);
                            s.script = vec![Action::Mission { targets, id: None }];
                            let engine = Engine::with_map(s, g, sg, TelemetryWriter::sink()).expect("engine");
                            let mut d = Director::from_engine(engine, rng);
                            d.engine.enable_outbox();
                            let (mut truncated, mut charged, mut at_dock) = (false, false, f64::NAN);
                            let mut empty = false;
                            let mut guard = 0;
                            while !d.is_finished() && guard < 20_000 {
                                d.step().expect("tick");
                                guard += 1;
                                for r in d.engine.drain_outbox() {
                                    match r.event.tag() {
                                        "return_to_dock" => truncated = true,
                                        "battery_empty" => empty = true,
                                        "charging_started" if !charged => {
                                            charged = true;
                                            at_dock = d.engine.sim().state.battery;
                                        }
                                        _ => {}
                                    }
                                }
                            }
                            (charged && !empty && at_dock > 0.0, truncated, at_dock)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let ok = results.iter().filter(|r| r.0).count();
    let truncated = results.iter().filter(|r| r.1).count();
    let lowest = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    outcome(
        "battery: truncation leaves battery > 0 at the dock in 50 low-battery missions",
        ok == 50 && truncated > 0,
        format!("{ok}/50 reached the charger with charge left ({truncated} truncated), lowest {lowest:.0} J"),
    )
}

// ---------------------------------------------------------------- campaign

fn run_to_bytes(s: Scenario, duration: Option<f64>) -> (Vec<u8>, fieldnav::runtime::RunSummary) {
    let buf = SharedBuf::default();
    let summary = run_scenario(s, duration, Box::new(buf.clone())).expect("run");
    let bytes = buf.0.lock().unwrap().clone();
    (bytes, summary)
}

/// Independent re-aggregation straight from the JSON records.
#[derive(Debug, Default)]
struct Reagg {
    autonomous_s: f64,
    autonomous_m: f64,
    traversal_m: f64,
    buckets: BTreeMap<i64, (f64, f64)>,
    taught: BTreeSet<String>,
    retaught: BTreeSet<String>,
    reteach_events: usize,
    reteach_teaches: usize,
    missions: u32,
    captures: u32,
    completed: usize,
    aborted: usize,
}

fn reaggregate(text: &str) -> Reagg {
    let mut r = Reagg::default();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).expect("json line");
        match v["type"].as_str() {
            Some("tick") => {
                let (s, m) = (v["autonomous_s"].as_f64().unwrap(), v["autonomous_m"].as_f64().unwrap());
                r.autonomous_s += s;
                r.autonomous_m += m;
                let day = (v["calendar"].as_f64().unwrap() / 86_400.0).floor() as i64;
                let b = r.buckets.entry(day).or_default();
                b.0 += s;
                b.1 += m;
            }
            Some("event") => match v["kind"].as_str().unwrap() {
                "traversal_finished" => {
                    r.traversal_m += v["distance"].as_f64().unwrap();
                    if v["outcome"] == "COMPLETED" {
                        r.completed += 1;
                    } else {
                        r.aborted += 1;
                    }
                }
                "teach_finished" => {
                    if let Some(e) = v["edge"].as_str() {
                        if v["reteach"] == true {
                            r.reteach_teaches += 1;
                        } else {
                            r.taught.insert(e.to_string());
                        }
                    }
                }
                "reteach" => {
                    r.reteach_events += 1;
                    r.retaught.insert(v["edge"].as_str().unwrap().to_string());
                }
                "mission_planned" => r.missions += 1,
                "capture" => r.captures += 1,
                _ => {}
            },
            _ => {}
        }
    }
    r
}

fn campaign() -> Vec<Outcome> {
    let s = common::scenario("campaign.json");
    let sites = s.site.as_ref().map_or(0, |x| x.edges.len());
    let t = Instant::now();
    let (bytes, summary) = run_to_bytes(s, None);
    let took = t.elapsed();
    let text = String::from_utf8(bytes).unwrap();
    let rep = &summary.report;
    let o = reaggregate(&text);
    let never = (o.taught.len() - o.taught.intersection(&o.retaught).count()) as f64 / o.taught.len().max(1) as f64;
    let buckets_match = rep.buckets.len() == o.buckets.len()
        && rep.buckets.iter().all(|b| o.buckets.get(&b.bucket) == Some(&(b.autonomous_s, b.metres)));
    let offline = stats_from_text(&text, StatsConfig::default());
    let first_bucket_diff = rep
        .buckets
        .iter()
        .find(|b| o.buckets.get(&b.bucket) != Some(&(b.autonomous_s, b.metres)))
        .map(|b| format!("; bucket {} report ({}, {}) log {:?}", b.bucket, b.autonomous_s, b.metres, o.buckets.get(&b.bucket)))
        .unwrap_or_default();
    let offline_diff = match &offline {
        Ok(r) => {
            let (a, b) = (serde_json::to_value(rep).unwrap(), serde_json::to_value(r).unwrap());
            let keys: Vec<String> = a
                .as_object()
                .unwrap()
                .iter()
                .filter(|(k, v)| b.get(k.as_str()) != Some(*v))
                .map(|(k, _)| k.clone())
                .collect();
            if keys.is_empty() { String::new() } else { format!("; offline differs in {keys:?}") }
        }
        Err(e) => format!("; offline failed: {e}"),
    };
    let checks = [
        ("autonomous_s", rep.autonomous_s == o.autonomous_s),
        ("autonomous_m", rep.autonomous_m == o.autonomous_m),
        ("traversal_m", rep.traversal_m == o.traversal_m),
        ("buckets", buckets_match),
        ("taught_edges", rep.taught_edges == o.taught.len()),
        ("retaught_edges", rep.retaught_edges == o.taught.intersection(&o.retaught).count()),
        ("never_retaught_fraction", rep.never_retaught_fraction == never),
        ("reteaches", rep.reteaches.len() == o.reteach_events),
        ("reteach_sessions", o.reteach_events == o.reteach_teaches),
        ("missions", rep.missions == o.missions),
        ("captures", rep.captures == o.captures),
        ("traversals", rep.traversals.len() == o.completed + o.aborted),
        ("offline_stats", offline.as_ref().is_ok_and(|r| r == rep)),
    ];
    let mismatched: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    vec![
        outcome(
            "campaign: never-re-taught edge fraction in [0.45, 0.75] over 75 edges",
            sites == 75 && rep.taught_edges == 75 && (0.45..=0.75).contains(&rep.never_retaught_fraction),
            format!(
                "{} site edges, {} taught, {} re-taught, fraction {:.4}",
                sites, rep.taught_edges, rep.retaught_edges, rep.never_retaught_fraction
            ),
        ),
        outcome(
            "campaign: cumulative autonomous metres >= 10 km",
            rep.autonomous_m >= 10_000.0,
            format!("{:.1} m over {} runs", rep.autonomous_m, rep.runs.len()),
        ),
        outcome(
            "campaign: report fields equal independent re-aggregation of the log",
            mismatched.is_empty(),
            format!(
                "{} fields compared, mismatched {:?}; {} buckets, {} reteach events, {} traversals{first_bucket_diff}{offline_diff}",
                checks.len(),
                mismatched,
                o.buckets.len(),
                o.reteach_events,
                o.completed + o.aborted
            ),
        ),
        outcome(
            "campaign: autonomous metres equal the sum of traversal distances within 1e-6",
            (rep.autonomous_m - o.traversal_m).abs() <= 1e-6,
            format!("{:.9} vs {:.9}", rep.autonomous_m, o.traversal_m),
        ),
        outcome(
            "campaign: six-week run at acceleration 100 finishes within 5 min",
            took < Duration::from_secs(300) && summary.report.ticks > 0,
            format!("{:.1} s wall for {} ticks", took.as_secs_f64(), summary.ticks),
        ),
    ]
}

fn determinism() -> Outcome {
    let runs: Vec<(&str, Option<f64>)> = vec![
        ("single_edge.json", None),
        ("straight_100m.json", None),
        ("tight_turn.json", None),
        ("mission_ring.json", None),
        // Three calendar days of the campaign.
        ("campaign.json", Some(3.0 * 86_400.0 / 100.0)),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, dur) in runs {
        let (a, _) = run_to_bytes(common::scenario(name), dur);
        let (b, _) = run_to_bytes(common::scenario(name), dur);
        ok &= a == b && !a.is_empty();
        detail.push(format!("{name} {} B {}", a.len(), if a == b { "same" } else { "DIFFER" }));
    }
    outcome("determinism: same seed gives byte-identical logs", ok, detail.join(", "))
}

fn main() {
    type Check = fn() -> Vec<Outcome>;
    let checks: Vec<(&str, Check)> = vec![
        ("campaign", campaign),
        ("graph", graph_suite),
        ("repeat", zero_noise_repeat),
        ("persistence", || vec![persistence_halves_inliers()]),
        ("lost", || vec![lost_after_n_failures()]),
        ("tight_turn", || vec![tight_turn()]),
        ("safety", || vec![safety_curtain()]),
        ("sub_size", || vec![sub_size_returns()]),
        ("docking", || vec![docking_success()]),
        ("match", || vec![match_recovery()]),
        ("perception", || vec![perception_deterministic()]),
        ("endurance", || vec![endurance()]),
        ("low_battery", || vec![low_battery_missions()]),
        ("determinism", || vec![determinism()]),
    ];
    // Optional name filters, as with the default harness.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: Vec<Check> = checks
        .into_iter()
        .filter(|(n, _)| filters.is_empty() || filters.iter().any(|f| n.contains(f.as_str())))
        .map(|(_, c)| c)
        .collect();
    let t = Instant::now();
    let results: Vec<Vec<Outcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = checks.iter().map(|c| s.spawn(*c)).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|e| {
                    let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                    vec![outcome("check panicked", false, msg.unwrap_or_default())]
                })
            })
            .collect()
    });
    let all: Vec<Outcome> = results.into_iter().flatten().collect();
    let mut out = std::io::stdout().lock();
    for o in &all {
        let _ = writeln!(out, "{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = all.iter().filter(|o| !o.pass).count();
    let _ = writeln!(out, "acceptance: {} passed, {failed} failed in {:.1} s", all.len() - failed, t.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
