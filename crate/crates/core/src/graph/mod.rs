//! Topometric experience graph: keyframes joined by relative-pose edges,
//! grouped into experiences, with supergraph edges bound to the experience
//! currently used to repeat them.

pub mod format;
pub mod vocab;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose2};
use crate::sim::CameraObservation;

pub use format::{load, save, FormatError};
pub use vocab::{Bow, Vocabulary, VocabularyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyframeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperienceId(pub u32);

impl fmt::Display for KeyframeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kf{}", self.0)
    }
}

impl fmt::Display for ExperienceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLandmark {
    /// Keyframe frame.
    pub position: Point2,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub stamp: f64,
    pub experience: ExperienceId,
    pub landmarks: Vec<MapLandmark>,
    pub bow: Bow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperienceEdge {
    pub from: KeyframeId,
    pub to: KeyframeId,
    /// Pose of `to` in the frame of `from`.
    pub relative_pose: Pose2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub id: ExperienceId,
    /// Decay-clock time the recording started.
    pub created: f64,
    /// Supergraph edge this experience was taught for, if any.
    pub label: Option<String>,
    /// Operator-supplied approximate site pose of the first keyframe. Used
    /// only to check manual initialisation headings and to draw maps.
    pub origin: Pose2,
    pub keyframes: Vec<KeyframeId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown experience {0}")]
    UnknownExperience(ExperienceId),
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(KeyframeId),
    #[error("unknown supergraph edge {0:?}")]
    UnknownEdgeRef(String),
    #[error("experience {0} is active for edge {1:?}; rebind before purging")]
    ExperienceInUse(ExperienceId, String),
    #[error("experience {0} is empty")]
    EmptyExperience(ExperienceId),
    #[error("descriptor has {got} components, vocabulary expects {want}")]
    DescriptorDim { got: usize, want: usize },
}

/// Problem found by [`ExperienceGraph::audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditIssue(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceGraph {
    pub vocabulary: Vocabulary,
    keyframes: BTreeMap<KeyframeId, Keyframe>,
    edges: Vec<ExperienceEdge>,
    experiences: BTreeMap<ExperienceId, Experience>,
    bindings: BTreeMap<String, ExperienceId>,
    next_keyframe: u32,
    next_experience: u32,
    /// Neighbour id and its pose in this keyframe's frame, ascending by id.
    adjacency: BTreeMap<KeyframeId, Vec<(KeyframeId, Pose2)>>,
}

impl ExperienceGraph {
    pub fn new(vocabulary: Vocabulary) -> Self {
        Self {
            vocabulary,
            keyframes: BTreeMap::new(),
            edges: Vec::new(),
            experiences: BTreeMap::new(),
            bindings: BTreeMap::new(),
            next_keyframe: 0,
            next_experience: 0,
            adjacency: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(
        vocabulary: Vocabulary,
        keyframes: Vec<Keyframe>,
        edges: Vec<ExperienceEdge>,
        experiences: Vec<Experience>,
        bindings: BTreeMap<String, ExperienceId>,
        next_keyframe: u32,
        next_experience: u32,
    ) -> Self {
        let mut g = Self {
            vocabulary,
            keyframes: keyframes.into_iter().map(|k| (k.id, k)).collect(),
            edges,
            experiences: experiences.into_iter().map(|e| (e.id, e)).collect(),
            bindings,
            next_keyframe,
            next_experience,
            adjacency: BTreeMap::new(),
        };
        g.rebuild_adjacency();
        g
    }

    fn rebuild_adjacency(&mut self) {
        self.adjacency.clear();
        let edges = std::mem::take(&mut self.edges);
        for e in &edges {
            self.link(e);
        }
        self.edges = edges;
    }

    fn link(&mut self, e: &ExperienceEdge) {
        for (a, b, p) in [(e.from, e.to, e.relative_pose), (e.to, e.from, e.relative_pose.inverse())] {
            let list = self.adjacency.entry(a).or_default();
            let at = list.partition_point(|(k, _)| *k < b);
            list.insert(at, (b, p));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn keyframe(&self, id: KeyframeId) -> Option<&Keyframe> {
        self.keyframes.get(&id)
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> {
        self.keyframes.values()
    }

    pub fn edges(&self) -> &[ExperienceEdge] {
        &self.edges
    }

    pub fn experience(&self, id: ExperienceId) -> Option<&Experience> {
        self.experiences.get(&id)
    }

    pub fn experiences(&self) -> impl Iterator<Item = &Experience> {
        self.experiences.values()
    }

    pub fn bindings(&self) -> &BTreeMap<String, ExperienceId> {
        &self.bindings
    }

    pub fn active_experience(&self, edge_ref: &str) -> Option<ExperienceId> {
        self.bindings.get(edge_ref).copied()
    }

    pub(crate) fn counters(&self) -> (u32, u32) {
        (self.next_keyframe, self.next_experience)
    }

    /// Keyframes one edge away, ascending by id.
    pub fn neighbours(&self, id: KeyframeId) -> impl Iterator<Item = KeyframeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().map(|(k, _)| *k)
    }

    pub fn begin_experience(&mut self, created: f64, label: Option<String>) -> ExperienceId {
        self.begin_experience_at(created, label, Pose2::IDENTITY)
    }

    pub fn begin_experience_at(&mut self, created: f64, label: Option<String>, origin: Pose2) -> ExperienceId {
        let id = ExperienceId(self.next_experience);
        self.next_experience += 1;
        self.experiences.insert(
            id,
            Experience {
                id,
                created,
                label,
                origin,
                keyframes: Vec::new(),
            },
        );
        id
    }

    /// Append a keyframe built from a live observation. `vo_delta` is the
    /// motion since the experience's previous keyframe; ignored for the first.
    pub fn append_keyframe(
        &mut self,
        obs: &CameraObservation,
        vo_delta: Pose2,
        experience: ExperienceId,
    ) -> Result<KeyframeId, GraphError> {
        let landmarks = obs
            .observed
            .iter()
            .map(|f| MapLandmark {
                position: f.point(),
                descriptor: f.descriptor.clone(),
            })
            .collect();
        self.append_landmarks(obs.timestamp, landmarks, vo_delta, experience)
    }

    pub fn append_landmarks(
        &mut self,
        stamp: f64,
        landmarks: Vec<MapLandmark>,
        vo_delta: Pose2,
        experience: ExperienceId,
    ) -> Result<KeyframeId, GraphError> {
        let dim = self.vocabulary.dim();
        if let Some(l) = landmarks.iter().find(|l| l.descriptor.len() != dim) {
            return Err(GraphError::DescriptorDim { got: l.descriptor.len(), want: dim });
        }
        let exp = self
            .experiences
            .get_mut(&experience)
            .ok_or(GraphError::UnknownExperience(experience))?;
        let id = KeyframeId(self.next_keyframe);
        self.next_keyframe += 1;
        let bow = self.vocabulary.quantise(landmarks.iter().map(|l| l.descriptor.as_slice()));
        let prev = exp.keyframes.last().copied();
        exp.keyframes.push(id);
        if let Some(prev) = prev {
            let edge = ExperienceEdge {
                from: prev,
                to: id,
                relative_pose: vo_delta,
            };
            self.link(&edge);
            self.edges.push(edge);
        }
        self.keyframes.insert(
            id,
            Keyframe {
                id,
                stamp,
                experience,
                landmarks,
                bow,
            },
        );
        Ok(id)
    }

    /// Drop an experience that is still in progress or no longer wanted and
    /// not bound to any supergraph edge.
    pub fn purge_experience(&mut self, experience: ExperienceId) -> Result<(), GraphError> {
        if let Some((k, _)) = self.bindings.iter().find(|(_, &e)| e == experience) {
            return Err(GraphError::ExperienceInUse(experience, k.clone()));
        }
        let exp = self
            .experiences
            .remove(&experience)
            .ok_or(GraphError::UnknownExperience(experience))?;
        for id in &exp.keyframes {
            self.keyframes.remove(id);
        }
        self.edges
            .retain(|e| self.keyframes.contains_key(&e.from) && self.keyframes.contains_key(&e.to));
        self.rebuild_adjacency();
        Ok(())
    }

    /// Experiences not bound to any supergraph edge.
    pub fn inactive_experiences(&self) -> Vec<ExperienceId> {
        self.experiences
            .keys()
            .copied()
            .filter(|id| !self.bindings.values().any(|b| b == id))
            .collect()
    }

    /// Bind a supergraph edge for the first time, or rebind it.
    pub fn bind_edge(&mut self, edge_ref: &str, experience: ExperienceId) -> Result<(), GraphError> {
        let exp = self
            .experiences
            .get(&experience)
            .ok_or(GraphError::UnknownExperience(experience))?;
        if exp.keyframes.is_empty() {
            return Err(GraphError::EmptyExperience(experience));
        }
        self.bindings.insert(edge_ref.to_string(), experience);
        Ok(())
    }

    /// Point an already-bound edge at a new experience; the old one is kept.
    pub fn replace_experience(&mut self, edge_ref: &str, experience: ExperienceId) -> Result<ExperienceId, GraphError> {
        let old = *self
            .bindings
            .get(edge_ref)
            .ok_or_else(|| GraphError::UnknownEdgeRef(edge_ref.to_string()))?;
        self.bind_edge(edge_ref, experience)?;
        Ok(old)
    }

    /// Pose of each keyframe of an experience, in the frame of its first.
    pub fn chain_poses(&self, experience: ExperienceId) -> Result<Vec<Pose2>, GraphError> {
        let exp = self
            .experiences
            .get(&experience)
            .ok_or(GraphError::UnknownExperience(experience))?;
        let mut poses = Vec::with_capacity(exp.keyframes.len());
        let mut acc = Pose2::IDENTITY;
        for (i, id) in exp.keyframes.iter().enumerate() {
            if i > 0 {
                let rel = self
                    .edge_pose(exp.keyframes[i - 1], *id)
                    .ok_or(GraphError::UnknownKeyframe(*id))?;
                acc = acc.compose(&rel);
            }
            poses.push(acc);
        }
        Ok(poses)
    }

    /// Relative pose along a stored edge in either direction.
    pub fn edge_pose(&self, from: KeyframeId, to: KeyframeId) -> Option<Pose2> {
        let list = self.adjacency.get(&from)?;
        let at = list.binary_search_by_key(&to, |(k, _)| *k).ok()?;
        Some(list[at].1)
    }

    /// Keyframes within `radius` edges of `seed`, as `(id, depth)` in
    /// breadth-first order with equal depths ascending by id.
    pub fn bfs(&self, seed: KeyframeId, radius: usize) -> Vec<(KeyframeId, usize)> {
        let mut out = Vec::new();
        if !self.keyframes.contains_key(&seed) {
            return out;
        }
        let mut seen = std::collections::BTreeSet::from([seed]);
        let mut frontier = VecDeque::from([(seed, 0usize)]);
        while let Some((id, depth)) = frontier.pop_front() {
            out.push((id, depth));
            if depth == radius {
                continue;
            }
            for n in self.neighbours(id) {
                if seen.insert(n) {
                    frontier.push_back((n, depth + 1));
                }
            }
        }
        // Neighbour lists are sorted, but ids reached through different
        // parents can interleave; order each depth layer by id.
        out.sort_by_key(|&(id, d)| (d, id));
        out
    }

    /// Check structural invariants; returns every violation found.
    pub fn audit(&self) -> Vec<AuditIssue> {
        let mut issues = Vec::new();
        let mut in_deg: BTreeMap<KeyframeId, usize> = BTreeMap::new();
        let mut out_deg: BTreeMap<KeyframeId, usize> = BTreeMap::new();
        for e in &self.edges {
            for end in [e.from, e.to] {
                if !self.keyframes.contains_key(&end) {
                    issues.push(AuditIssue(format!("edge {}->{} references missing {end}", e.from, e.to)));
                }
            }
            *out_deg.entry(e.from).or_default() += 1;
            *in_deg.entry(e.to).or_default() += 1;
        }
        for (id, d) in in_deg.iter().filter(|(_, &d)| d > 1) {
            issues.push(AuditIssue(format!("{id} has in-degree {d}")));
        }
        for (id, d) in out_deg.iter().filter(|(_, &d)| d > 1) {
            issues.push(AuditIssue(format!("{id} has out-degree {d}")));
        }
        let mut owned = 0usize;
        for exp in self.experiences.values() {
            owned += exp.keyframes.len();
            for w in exp.keyframes.windows(2) {
                if !self.edges.iter().any(|e| e.from == w[0] && e.to == w[1]) {
                    issues.push(AuditIssue(format!("{}: no edge {}->{}", exp.id, w[0], w[1])));
                }
            }
            for id in &exp.keyframes {
                match self.keyframes.get(id) {
                    None => issues.push(AuditIssue(format!("{} lists missing {id}", exp.id))),
                    Some(k) if k.experience != exp.id => {
                        issues.push(AuditIssue(format!("{id} listed by {} but owned by {}", exp.id, k.experience)))
                    }
                    Some(k) => {
                        let bow = self.vocabulary.quantise(k.landmarks.iter().map(|l| l.descriptor.as_slice()));
                        if bow != k.bow {
                            issues.push(AuditIssue(format!("{id}: stored histogram is stale")));
                        }
                    }
                }
            }
        }
        if owned != self.keyframes.len() {
            issues.push(AuditIssue(format!(
                "{} keyframes but experiences list {owned}",
                self.keyframes.len()
            )));
        }
        let chain_edges: usize = self.experiences.values().map(|e| e.keyframes.len().saturating_sub(1)).sum();
        if chain_edges != self.edges.len() {
            issues.push(AuditIssue(format!("{} edges but chains need {chain_edges}", self.edges.len())));
        }
        for (k, e) in &self.bindings {
            if !self.experiences.contains_key(e) {
                issues.push(AuditIssue(format!("edge {k:?} bound to missing {e}")));
            }
        }
        issues
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::random_unit_vector;
    use crate::sim::ObservedFeature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_vocab(rng: &mut ChaCha8Rng) -> Vocabulary {
        let c: Vec<f64> = (0..16).flat_map(|_| random_unit_vector(rng, 4)).collect();
        Vocabulary::new(4, c).unwrap()
    }

    fn obs(rng: &mut ChaCha8Rng, n: usize) -> CameraObservation {
        CameraObservation {
            timestamp: 0.0,
            observed: (0..n)
                .map(|i| ObservedFeature {
                    landmark_id: i as u32,
                    bearing: rng.random_range(-3.0..3.0),
                    range: rng.random_range(0.5..5.0),
                    descriptor: random_unit_vector(rng, 4),
                })
                .collect(),
        }
    }

    #[test]
    fn first_keyframe_has_no_edge_and_chain_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = ExperienceGraph::new(test_vocab(&mut rng));
        let e = g.begin_experience(0.0, None);
        let a = g.append_keyframe(&obs(&mut rng, 5), Pose2::IDENTITY, e).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(g.neighbours(a).count(), 0);
        let deltas: Vec<Pose2> = (0..10)
            .map(|_| Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)))
            .collect();
        for d in &deltas {
            g.append_keyframe(&obs(&mut rng, 5), *d, e).unwrap();
        }
        let poses = g.chain_poses(e).unwrap();
        let oracle = deltas.iter().fold(Pose2::IDENTITY, |acc, d| acc.compose(d));
        assert!(poses.last().unwrap().approx_eq(&oracle, 1e-12, 1e-12));
        assert!(g.audit().is_empty());
    }

    #[test]
    fn two_unit_deltas_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = ExperienceGraph::new(test_vocab(&mut rng));
        let e = g.begin_experience(0.0, None);
        let a = g.append_keyframe(&obs(&mut rng, 3), Pose2::new(1.0, 0.0, 0.0), e).unwrap();
        let b = g.append_keyframe(&obs(&mut rng, 3), Pose2::new(1.0, 0.0, 0.0), e).unwrap();
        assert_eq!(g.edge_pose(a, b), Some(Pose2::new(1.0, 0.0, 0.0)));
        assert_eq!(g.edge_pose(b, a), Some(Pose2::new(-1.0, 0.0, 0.0)));
    }

    #[test]
    fn unknown_experience_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = ExperienceGraph::new(test_vocab(&mut rng));
        let err = g.append_keyframe(&obs(&mut rng, 3), Pose2::IDENTITY, ExperienceId(9));
        assert_eq!(err, Err(GraphError::UnknownExperience(ExperienceId(9))));
    }

    #[test]
    fn replace_is_last_writer_and_keeps_old() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = ExperienceGraph::new(test_vocab(&mut rng));
        let mut exps = Vec::new();
        for _ in 0..3 {
            let e = g.begin_experience(0.0, Some("A-B".into()));
            g.append_keyframe(&obs(&mut rng, 3), Pose2::IDENTITY, e).unwrap();
            exps.push(e);
        }
        assert!(g.replace_experience("A-B", exps[1]).is_err());
        g.bind_edge("A-B", exps[0]).unwrap();
        assert_eq!(g.replace_experience("A-B", exps[1]).unwrap(), exps[0]);
        g.replace_experience("A-B", exps[2]).unwrap();
        assert_eq!(g.active_experience("A-B"), Some(exps[2]));
        assert!(g.experience(exps[0]).is_some());
        assert!(g.purge_experience(exps[2]).is_err());
        g.purge_experience(exps[0]).unwrap();
        assert!(g.audit().is_empty());
    }

    #[test]
    fn bfs_orders_by_depth_then_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = ExperienceGraph::new(test_vocab(&mut rng));
        let e = g.begin_experience(0.0, None);
        let ids: Vec<KeyframeId> = (0..8)
            .map(|_| g.append_keyframe(&obs(&mut rng, 2), Pose2::new(1.0, 0.0, 0.0), e).unwrap())
            .collect();
        let r = g.bfs(ids[4], 2);
        let got: Vec<(u32, usize)> = r.iter().map(|(k, d)| (k.0, *d)).collect();
        assert_eq!(got, vec![(4, 0), (3, 1), (5, 1), (2, 2), (6, 2)]);
    }
}
