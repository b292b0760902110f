//! Teach phase: drop a keyframe each time the odometry arc since the last
//! one reaches the spacing.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::graph::{ExperienceGraph, ExperienceId, GraphError};
use crate::sim::CameraObservation;

use super::path::TaughtPath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeachConfig {
    pub keyframe_spacing: f64,
}

impl Default for TeachConfig {
    fn default() -> Self {
        Self { keyframe_spacing: 1.0 }
    }
}

/// Incremental recorder; the runtime feeds it once per tick.
#[derive(Debug, Clone)]
pub struct Teacher {
    config: TeachConfig,
    experience: ExperienceId,
    since_last: Pose2,
    arc: f64,
    last_obs: Option<CameraObservation>,
}

impl Teacher {
    /// Opens a new experience and keyframes the starting observation.
    pub fn start(
        graph: &mut ExperienceGraph,
        config: TeachConfig,
        created: f64,
        label: Option<String>,
        origin: Pose2,
        obs: &CameraObservation,
    ) -> Result<Self, GraphError> {
        let experience = graph.begin_experience_at(created, label, origin);
        graph.append_keyframe(obs, Pose2::IDENTITY, experience)?;
        Ok(Self {
            config,
            experience,
            since_last: Pose2::IDENTITY,
            arc: 0.0,
            last_obs: None,
        })
    }

    pub fn experience(&self) -> ExperienceId {
        self.experience
    }

    /// Odometry pose relative to the latest keyframe.
    pub fn since_last(&self) -> Pose2 {
        self.since_last
    }

    pub fn tick(&mut self, graph: &mut ExperienceGraph, vo_delta: &Pose2, obs: &CameraObservation) -> Result<bool, GraphError> {
        self.since_last = self.since_last.compose(vo_delta);
        self.arc += vo_delta.translation().norm();
        if self.arc >= self.config.keyframe_spacing - 1e-9 {
            graph.append_keyframe(obs, self.since_last, self.experience)?;
            self.since_last = Pose2::IDENTITY;
            self.arc = 0.0;
            self.last_obs = None;
            return Ok(true);
        }
        self.last_obs = Some(obs.clone());
        Ok(false)
    }

    /// Keyframes the final pose if the robot moved since the last keyframe.
    pub fn finish(mut self, graph: &mut ExperienceGraph) -> Result<TaughtPath, GraphError> {
        if self.arc > 1e-9 {
            if let Some(obs) = self.last_obs.take() {
                graph.append_keyframe(&obs, self.since_last, self.experience)?;
            }
        }
        let path = TaughtPath::from_graph(graph, self.experience)?;
        if path.is_degenerate() {
            warn!("experience {} taught with a single keyframe", self.experience);
        }
        Ok(path)
    }

    /// Abandon the recording, e.g. on e-stop during teach.
    pub fn discard(self, graph: &mut ExperienceGraph) -> Result<(), GraphError> {
        graph.purge_experience(self.experience)
    }
}

/// Batch form: the first element pairs the start observation with an
/// identity delta.
pub fn teach<'a, I>(graph: &mut ExperienceGraph, config: TeachConfig, created: f64, trace: I) -> Result<TaughtPath, GraphError>
where
    I: IntoIterator<Item = (Pose2, &'a CameraObservation)>,
{
    let mut it = trace.into_iter();
    let Some((_, first)) = it.next() else {
        let e = graph.begin_experience(created, None);
        return TaughtPath::from_graph(graph, e);
    };
    let mut t = Teacher::start(graph, config, created, None, Pose2::IDENTITY, first)?;
    for (delta, obs) in it {
        t.tick(graph, &delta, obs)?;
    }
    t.finish(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Vocabulary;
    use crate::sim::world::random_unit_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph() -> ExperienceGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c: Vec<f64> = (0..8).flat_map(|_| random_unit_vector(&mut rng, 16)).collect();
        ExperienceGraph::new(Vocabulary::new(16, c).unwrap())
    }

    fn obs(t: f64) -> CameraObservation {
        CameraObservation { timestamp: t, observed: Vec::new() }
    }

    #[test]
    fn straight_ten_metres_gives_eleven_keyframes() {
        let mut g = graph();
        let o: Vec<CameraObservation> = (0..=100).map(|i| obs(i as f64 * 0.1)).collect();
        let trace = o.iter().enumerate().map(|(i, o)| (if i == 0 { Pose2::IDENTITY } else { Pose2::new(0.1, 0.0, 0.0) }, o));
        let path = teach(&mut g, TeachConfig::default(), 0.0, trace).unwrap();
        assert_eq!(path.keyframes.len(), 11);
        for (i, s) in path.arc_lengths.iter().enumerate() {
            assert!((s - i as f64).abs() < 1e-6);
        }
        assert!(g.audit().is_empty());
    }

    #[test]
    fn short_and_empty_traces() {
        let mut g = graph();
        let o: Vec<CameraObservation> = (0..4).map(|i| obs(i as f64)).collect();
        let trace = o.iter().enumerate().map(|(i, o)| (if i == 0 { Pose2::IDENTITY } else { Pose2::new(0.1, 0.0, 0.0) }, o));
        let p = teach(&mut g, TeachConfig::default(), 0.0, trace).unwrap();
        assert_eq!(p.keyframes.len(), 2);
        assert!((p.length() - 0.3).abs() < 1e-9);

        let trace = o.iter().map(|o| (Pose2::IDENTITY, o));
        let p = teach(&mut g, TeachConfig::default(), 0.0, trace).unwrap();
        assert_eq!(p.keyframes.len(), 1);
        assert!(p.is_degenerate());
    }

    #[test]
    fn arc_lengths_match_edges() {
        let mut g = graph();
        let o: Vec<CameraObservation> = (0..200).map(|i| obs(i as f64)).collect();
        let trace = o.iter().map(|o| (Pose2::new(0.08, 0.0, 0.03), o));
        let p = teach(&mut g, TeachConfig::default(), 0.0, trace).unwrap();
        for w in p.keyframes.windows(2).zip(p.arc_lengths.windows(2)) {
            let d = g.edge_pose(w.0[0], w.0[1]).unwrap().translation().norm();
            assert!((w.1[1] - w.1[0] - d).abs() < 1e-6);
            assert!(w.1[1] > w.1[0]);
        }
    }
}
