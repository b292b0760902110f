//! Static and scripted contents of the simulated site.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{Point2, Pose2, Rect};
use crate::sim::site::SiteConfig;

/// A visual feature in the world with a view-independent descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u32,
    pub position: Point2,
    pub descriptor: Vec<f64>,
    pub birth_time: f64,
    /// `None` means the landmark never fades.
    pub persistence_half_life: Option<f64>,
}

impl Landmark {
    /// `2^(-(t - birth) / half_life)`, clamped to 1 before birth.
    pub fn persistence(&self, t: f64) -> f64 {
        match self.persistence_half_life {
            Some(h) if t > self.birth_time => (-(t - self.birth_time) / h).exp2(),
            _ => 1.0,
        }
    }

    /// Landmarks do not exist before their birth time.
    pub fn is_present(&self, t: f64) -> bool {
        t >= self.birth_time
    }

    /// Probability of being sensed at `t` when within the field of view.
    pub fn visibility(&self, t: f64) -> f64 {
        if self.is_present(t) {
            self.persistence(t)
        } else {
            0.0
        }
    }
}

/// Unit-norm vector drawn uniformly from the sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn normalise(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    /// Landmarks per square metre of the zone (or of the band, for corridors).
    pub density: f64,
    /// Seconds; omitted means no decay.
    #[serde(default)]
    pub half_life: Option<f64>,
    /// Birth times are uniform in `[start, end]`.
    #[serde(default)]
    pub birth: [f64; 2],
    /// Lateral offset band `[min, max]` from a corridor's centreline.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoneRegion {
    Rect(Rect),
    Corridor {
        points: Vec<Point2>,
        half_width: f64,
    },
    /// Corridors along the listed site edges (all site edges when omitted).
    SiteEdges {
        #[serde(default)]
        edges: Option<Vec<String>>,
        half_width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkZone {
    pub region: ZoneRegion,
    pub populations: Vec<Population>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSpec {
    pub position: Point2,
    /// Random when omitted.
    #[serde(default)]
    pub descriptor: Option<Vec<f64>>,
    #[serde(default)]
    pub birth_time: f64,
    #[serde(default)]
    pub half_life: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSite {
    pub id: u32,
    pub position: Point2,
    #[serde(default = "default_quadrant")]
    pub quadrant: String,
}

fn default_quadrant() -> String {
    "NE".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: Point2,
}

/// Scripted moving disc (walker, animal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub radius: f64,
    pub trajectory: Vec<Waypoint>,
}

impl Agent {
    /// Piecewise-linear position, held constant outside the scripted span.
    pub fn position_at(&self, t: f64) -> Point2 {
        match self.trajectory.as_slice() {
            [] => Point2::ORIGIN,
            [only] => only.position,
            pts => {
                if t <= pts[0].t {
                    return pts[0].position;
                }
                for w in pts.windows(2) {
                    if t <= w[1].t {
                        let span = w[1].t - w[0].t;
                        let u = if span > 0.0 { (t - w[0].t) / span } else { 1.0 };
                        return w[0].position.lerp(w[1].position, u);
                    }
                }
                pts[pts.len() - 1].position
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    /// Closed polygon; the last vertex connects back to the first.
    pub polygon: Vec<Point2>,
}

/// Open "U" dock. In the dock frame the back wall lies on `x = 0`, the side
/// walls run to `x = depth`, and the opening faces `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DockLayout {
    pub width: f64,
    pub depth: f64,
    /// Distance of the docked robot origin from the back wall.
    pub docked_offset: f64,
    /// Runway length outward from the docked pose.
    pub runway_length: f64,
    pub charging_radius: f64,
}

impl Default for DockLayout {
    fn default() -> Self {
        Self {
            width: 0.8,
            depth: 1.0,
            docked_offset: 0.5,
            runway_length: 1.5,
            charging_radius: 0.1,
        }
    }
}

impl DockLayout {
    /// Wall segments in the dock frame: left side, back, right side.
    pub fn segments(&self) -> [(Point2, Point2); 3] {
        let h = self.width / 2.0;
        [
            (Point2::new(self.depth, h), Point2::new(0.0, h)),
            (Point2::new(0.0, h), Point2::new(0.0, -h)),
            (Point2::new(0.0, -h), Point2::new(self.depth, -h)),
        ]
    }

    /// Robot pose when docked, in the dock frame (facing the back wall).
    pub fn docked_pose(&self) -> Pose2 {
        Pose2::new(self.docked_offset, 0.0, PI)
    }

    /// Pose at the runway start, facing into the dock.
    pub fn runway_start(&self) -> Pose2 {
        Pose2::new(self.docked_offset + self.runway_length, 0.0, PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DockPlacement {
    /// Dock frame in the world.
    pub pose: Pose2,
    #[serde(default)]
    pub layout: DockLayout,
}

impl DockPlacement {
    pub fn docked_pose_world(&self) -> Pose2 {
        self.pose.compose(&self.layout.docked_pose())
    }

    pub fn world_segments(&self) -> Vec<(Point2, Point2)> {
        self.layout
            .segments()
            .iter()
            .map(|(a, b)| (self.pose.transform_point(*a), self.pose.transform_point(*b)))
            .collect()
    }

    pub fn in_charging_zone(&self, robot: &Pose2) -> bool {
        robot.distance_to(&self.docked_pose_world()) <= self.layout.charging_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub bounds: Rect,
    #[serde(default = "default_descriptor_dim")]
    pub descriptor_dim: usize,
    #[serde(default)]
    pub landmark_zones: Vec<LandmarkZone>,
    #[serde(default)]
    pub landmarks: Vec<LandmarkSpec>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub dock: Option<DockPlacement>,
    /// Explicit plots; when omitted `plot_count` plots are laid out on a grid.
    #[serde(default)]
    pub plots: Option<Vec<PlotSite>>,
    #[serde(default = "default_plot_count")]
    pub plot_count: usize,
}

fn default_descriptor_dim() -> usize {
    16
}

fn default_plot_count() -> usize {
    40
}

/// Uniform bucket grid over landmark positions.
#[derive(Debug, Clone)]
struct LandmarkGrid {
    origin: Point2,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl LandmarkGrid {
    fn build(bounds: &Rect, landmarks: &[Landmark]) -> Self {
        // 2.5 m cells, coarser on huge sites to cap the cell count.
        let cell = (bounds.area() / 1e6).sqrt().max(2.5);
        let cols = ((bounds.width() / cell).ceil() as usize).max(1);
        let rows = ((bounds.height() / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); cols * rows];
        let mut grid = Self {
            origin: bounds.min,
            cell,
            cols,
            rows,
            cells: Vec::new(),
        };
        for (i, l) in landmarks.iter().enumerate() {
            let (c, r) = grid.cell_of(l.position);
            cells[r * cols + c].push(i as u32);
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        let c = ((p.x - self.origin.x) / self.cell).floor().max(0.0) as usize;
        let r = ((p.y - self.origin.y) / self.cell).floor().max(0.0) as usize;
        (c.min(self.cols - 1), r.min(self.rows - 1))
    }

    /// Landmark indices in cells overlapping the disc, in ascending order.
    fn query(&self, centre: Point2, radius: f64, out: &mut Vec<u32>) {
        out.clear();
        let (c0, r0) = self.cell_of(Point2::new(centre.x - radius, centre.y - radius));
        let (c1, r1) = self.cell_of(Point2::new(centre.x + radius, centre.y + radius));
        for r in r0..=r1 {
            for c in c0..=c1 {
                out.extend_from_slice(&self.cells[r * self.cols + c]);
            }
        }
        out.sort_unstable();
    }
}

/// Everything static or scripted in the simulated site.
#[derive(Debug, Clone)]
pub struct WorldMap {
    pub bounds: Rect,
    pub descriptor_dim: usize,
    pub landmarks: Vec<Landmark>,
    pub obstacles: Vec<Obstacle>,
    pub agents: Vec<Agent>,
    pub dock: Option<DockPlacement>,
    pub plots: Vec<PlotSite>,
    grid: LandmarkGrid,
    static_segments: Vec<(Point2, Point2)>,
}

impl WorldMap {
    /// Build the world, sampling landmark populations with `rng`.
    pub fn generate<R: Rng + ?Sized>(
        cfg: &WorldConfig,
        site: Option<&SiteConfig>,
        rng: &mut R,
    ) -> Result<Self, ConfigError> {
        if !(cfg.bounds.width() > 0.0 && cfg.bounds.height() > 0.0) {
            return Err(ConfigError::Invalid("world.bounds: empty rectangle".into()));
        }
        if cfg.descriptor_dim == 0 {
            return Err(ConfigError::Invalid("world.descriptor_dim: must be > 0".into()));
        }
        let dim = cfg.descriptor_dim;
        let mut landmarks = Vec::new();
        for (i, spec) in cfg.landmarks.iter().enumerate() {
            let descriptor = match &spec.descriptor {
                Some(d) => {
                    if d.len() != dim {
                        return Err(ConfigError::Invalid(format!(
                            "world.landmarks[{i}].descriptor: expected {dim} components"
                        )));
                    }
                    let mut d = d.clone();
                    normalise(&mut d);
                    d
                }
                None => random_unit_vector(rng, dim),
            };
            if !cfg.bounds.contains(spec.position) {
                return Err(ConfigError::Invalid(format!(
                    "world.landmarks[{i}]: outside bounds"
                )));
            }
            landmarks.push(Landmark {
                id: landmarks.len() as u32,
                position: spec.position,
                descriptor,
                birth_time: spec.birth_time,
                persistence_half_life: spec.half_life,
            });
        }

        for (zi, zone) in cfg.landmark_zones.iter().enumerate() {
            let segments = zone_segments(&zone.region, site)
                .map_err(|m| ConfigError::Invalid(format!("world.landmark_zones[{zi}]: {m}")))?;
            for (pi, pop) in zone.populations.iter().enumerate() {
                if pop.density < 0.0 || pop.half_life.is_some_and(|h| h <= 0.0) {
                    return Err(ConfigError::Invalid(format!(
                        "world.landmark_zones[{zi}].populations[{pi}]: density must be >= 0 and half_life > 0"
                    )));
                }
                let mut push = |p: Point2, rng: &mut R| {
                    if !cfg.bounds.contains(p) {
                        return;
                    }
                    let birth = if pop.birth[1] > pop.birth[0] {
                        rng.random_range(pop.birth[0]..pop.birth[1])
                    } else {
                        pop.birth[0]
                    };
                    landmarks.push(Landmark {
                        id: landmarks.len() as u32,
                        position: p,
                        descriptor: random_unit_vector(rng, dim),
                        birth_time: birth,
                        persistence_half_life: pop.half_life,
                    });
                };
                match &segments {
                    ZoneShape::Rect(r) => {
                        let n = (pop.density * r.area()).round() as usize;
                        for _ in 0..n {
                            let p = Point2::new(
                                rng.random_range(r.min.x..=r.max.x),
                                rng.random_range(r.min.y..=r.max.y),
                            );
                            push(p, rng);
                        }
                    }
                    ZoneShape::Corridors(segs, half_width) => {
                        let [lo, hi] = pop.band.unwrap_or([0.0, *half_width]);
                        let (lo, hi) = (lo.max(0.0), hi.min(*half_width));
                        if hi <= lo {
                            continue;
                        }
                        for (a, b) in segs {
                            let len = a.distance(*b);
                            if len <= 0.0 {
                                continue;
                            }
                            let dir = (*b - *a).scale(1.0 / len);
                            let normal = Point2::new(-dir.y, dir.x);
                            let n = (pop.density * 2.0 * (hi - lo) * len).round() as usize;
                            for _ in 0..n {
                                let s = rng.random_range(0.0..len);
                                let off = rng.random_range(lo..hi);
                                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                                push(*a + dir.scale(s) + normal.scale(side * off), rng);
                            }
                        }
                    }
                }
            }
        }

        let plots = match &cfg.plots {
            Some(p) => p.clone(),
            None => grid_plots(&cfg.bounds, cfg.plot_count),
        };
        let mut ids = BTreeSet::new();
        for p in &plots {
            if !ids.insert(p.id) {
                return Err(ConfigError::Invalid(format!("world.plots: duplicate id {}", p.id)));
            }
            if !cfg.bounds.contains(p.position) {
                return Err(ConfigError::Invalid(format!(
                    "world.plots: plot {} outside bounds",
                    p.id
                )));
            }
        }

        let mut static_segments = Vec::new();
        for ob in &cfg.obstacles {
            let n = ob.polygon.len();
            for i in 0..n {
                static_segments.push((ob.polygon[i], ob.polygon[(i + 1) % n]));
            }
        }
        if let Some(d) = &cfg.dock {
            static_segments.extend(d.world_segments());
        }

        let grid = LandmarkGrid::build(&cfg.bounds, &landmarks);
        Ok(Self {
            bounds: cfg.bounds,
            descriptor_dim: dim,
            landmarks,
            obstacles: cfg.obstacles.clone(),
            agents: cfg.agents.clone(),
            dock: cfg.dock,
            plots,
            grid,
            static_segments,
        })
    }

    /// Indices of landmarks in grid cells that overlap the disc.
    pub fn landmarks_near(&self, centre: Point2, radius: f64, out: &mut Vec<u32>) {
        self.grid.query(centre, radius, out);
    }

    /// Wall segments that reflect LiDAR beams (obstacle polygons and dock).
    pub fn static_segments(&self) -> &[(Point2, Point2)] {
        &self.static_segments
    }
}

enum ZoneShape {
    Rect(Rect),
    Corridors(Vec<(Point2, Point2)>, f64),
}

fn zone_segments(region: &ZoneRegion, site: Option<&SiteConfig>) -> Result<ZoneShape, String> {
    match region {
        ZoneRegion::Rect(r) => Ok(ZoneShape::Rect(*r)),
        ZoneRegion::Corridor { points, half_width } => Ok(ZoneShape::Corridors(
            points.windows(2).map(|w| (w[0], w[1])).collect(),
            *half_width,
        )),
        ZoneRegion::SiteEdges { edges, half_width } => {
            let site = site.ok_or("site_edges zone requires a site section")?;
            let mut segs = Vec::new();
            let selected: Vec<&crate::sim::site::SiteEdge> = match edges {
                None => site.edges.iter().collect(),
                Some(keys) => keys
                    .iter()
                    .map(|k| site.edge(k).ok_or(format!("unknown site edge {k:?}")))
                    .collect::<Result<_, _>>()?,
            };
            for e in selected {
                let pts = site.polyline(e, &e.a).ok_or("edge references unknown node")?;
                segs.extend(pts.windows(2).map(|w| (w[0], w[1])));
            }
            Ok(ZoneShape::Corridors(segs, *half_width))
        }
    }
}

fn grid_plots(bounds: &Rect, count: usize) -> Vec<PlotSite> {
    if count == 0 {
        return Vec::new();
    }
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let quadrants = ["NE", "NW", "SW", "SE"];
    (0..count)
        .map(|i| {
            let c = i % cols;
            let r = i / cols;
            PlotSite {
                id: i as u32 + 1,
                position: Point2::new(
                    bounds.min.x + bounds.width() * (c as f64 + 0.5) / cols as f64,
                    bounds.min.y + bounds.height() * (r as f64 + 0.5) / rows as f64,
                ),
                quadrant: quadrants[i % 4].to_string(),
            }
        })
        .collect()
}
