//! Coarse topological map: one node per plot site or junction, one edge per
//! taught track between two of them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::graph::{ExperienceGraph, ExperienceId, KeyframeId};
use crate::sim::edge_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgNode {
    pub name: String,
    /// Approximate site position, for display and capture checks.
    pub position: Point2,
    #[serde(default)]
    pub plot: Option<u32>,
    /// Keyframes of incident experiences that sit at this node.
    #[serde(default)]
    pub anchors: Vec<KeyframeId>,
}

/// A taught experience and the node it was taught from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperienceRef {
    pub experience: ExperienceId,
    pub taught_from: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgEdge {
    pub a: String,
    pub b: String,
    pub length: f64,
    /// Oldest first; the last one is the active experience.
    pub experiences: Vec<ExperienceRef>,
}

impl SgEdge {
    pub fn key(&self) -> String {
        edge_key(&self.a, &self.b)
    }

    pub fn other(&self, node: &str) -> Option<&str> {
        if node == self.a {
            Some(&self.b)
        } else if node == self.b {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn active(&self) -> Option<&ExperienceRef> {
        self.experiences.last()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SupergraphError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown edge {0:?}")]
    UnknownEdge(String),
    #[error("duplicate edge {0:?}")]
    DuplicateEdge(String),
    #[error("edge {0:?} has non-positive length")]
    BadLength(String),
    #[error("edge {0:?} references no taught experience")]
    Untaught(String),
    #[error("edge {edge:?} references experience {experience} missing from the map")]
    DanglingExperience { edge: String, experience: ExperienceId },
    #[error("edge {edge:?} binds experience {bound:?} in the map but {listed} here")]
    BindingMismatch { edge: String, bound: Option<ExperienceId>, listed: ExperienceId },
    #[error("nodes unreachable from dock: {0:?}")]
    Disconnected(Vec<String>),
    #[error("supergraph file: {0}")]
    Io(String),
    #[error("supergraph file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Supergraph {
    pub nodes: BTreeMap<String, SgNode>,
    pub edges: Vec<SgEdge>,
    pub dock_node: String,
}

impl Supergraph {
    pub fn new(dock_node: impl Into<String>) -> Self {
        Self {
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            dock_node: dock_node.into(),
        }
    }

    pub fn add_node(&mut self, code: impl Into<String>, position: Point2, plot: Option<u32>) {
        let code = code.into();
        self.nodes.insert(
            code.clone(),
            SgNode {
                name: code,
                position,
                plot,
                anchors: Vec::new(),
            },
        );
    }

    pub fn edge_index(&self, a: &str, b: &str) -> Option<usize> {
        let k = edge_key(a, b);
        self.edges.iter().position(|e| e.key() == k)
    }

    pub fn edge(&self, key: &str) -> Option<&SgEdge> {
        self.edges.iter().find(|e| e.key() == key)
    }

    /// Record a newly taught experience for the track `from`→`to`, creating
    /// the edge when absent. The new experience becomes active.
    pub fn add_experience(
        &mut self,
        from: &str,
        to: &str,
        length: f64,
        experience: ExperienceId,
        graph: &ExperienceGraph,
    ) -> Result<(), SupergraphError> {
        for n in [from, to] {
            if !self.nodes.contains_key(n) {
                return Err(SupergraphError::UnknownNode(n.to_string()));
            }
        }
        let r = ExperienceRef {
            experience,
            taught_from: from.to_string(),
        };
        match self.edge_index(from, to) {
            Some(i) => {
                let e = &mut self.edges[i];
                e.length = length;
                e.experiences.push(r);
            }
            None => self.edges.push(SgEdge {
                a: from.to_string(),
                b: to.to_string(),
                length,
                experiences: vec![r],
            }),
        }
        self.refresh_anchors(graph);
        Ok(())
    }

    /// Drop references to experiences no longer in the map. Edges keep at
    /// least their active experience.
    pub fn prune_experiences(&mut self, graph: &ExperienceGraph) {
        for e in &mut self.edges {
            let active = e.experiences.last().cloned();
            e.experiences.retain(|r| graph.experience(r.experience).is_some());
            if e.experiences.is_empty() {
                e.experiences.extend(active);
            }
        }
        self.refresh_anchors(graph);
    }

    /// Anchors are the first and last keyframe of each active experience.
    pub fn refresh_anchors(&mut self, graph: &ExperienceGraph) {
        for n in self.nodes.values_mut() {
            n.anchors.clear();
        }
        for e in &self.edges {
            let Some(r) = e.active() else { continue };
            let Some(exp) = graph.experience(r.experience) else { continue };
            let (Some(&first), Some(&last)) = (exp.keyframes.first(), exp.keyframes.last()) else { continue };
            let to = e.other(&r.taught_from).unwrap_or(&e.b).to_string();
            if let Some(n) = self.nodes.get_mut(&r.taught_from) {
                n.anchors.push(first);
            }
            if let Some(n) = self.nodes.get_mut(&to) {
                n.anchors.push(last);
            }
        }
        for n in self.nodes.values_mut() {
            n.anchors.sort();
            n.anchors.dedup();
        }
    }

    /// Neighbours of `node` as (neighbour code, edge index), ascending by code.
    pub fn neighbours(&self, node: &str) -> Vec<(&str, usize)> {
        let mut out: Vec<(&str, usize)> = self
            .edges
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.other(node).map(|o| (o, i)))
            .collect();
        out.sort();
        out
    }

    /// Structural checks only; see [`Supergraph::audit_against`] for the map.
    pub fn validate(&self) -> Result<(), SupergraphError> {
        if !self.nodes.contains_key(&self.dock_node) {
            return Err(SupergraphError::UnknownNode(self.dock_node.clone()));
        }
        let mut keys = BTreeSet::new();
        for e in &self.edges {
            let k = e.key();
            for n in [&e.a, &e.b] {
                if !self.nodes.contains_key(n) {
                    return Err(SupergraphError::UnknownNode(n.clone()));
                }
            }
            if !keys.insert(k.clone()) {
                return Err(SupergraphError::DuplicateEdge(k));
            }
            if !(e.length > 0.0) {
                return Err(SupergraphError::BadLength(k));
            }
            if e.experiences.is_empty() {
                return Err(SupergraphError::Untaught(k));
            }
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.dock_node.as_str()]);
        seen.insert(self.dock_node.as_str());
        while let Some(n) = queue.pop_front() {
            for (m, _) in self.neighbours(n) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        let missing: Vec<String> = self.nodes.keys().filter(|k| !seen.contains(k.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(SupergraphError::Disconnected(missing));
        }
        Ok(())
    }

    /// Every referenced experience exists and each active one is bound in
    /// the map under the edge key.
    pub fn audit_against(&self, graph: &ExperienceGraph) -> Result<(), SupergraphError> {
        self.validate()?;
        for e in &self.edges {
            let key = e.key();
            for r in &e.experiences {
                if graph.experience(r.experience).is_none() {
                    return Err(SupergraphError::DanglingExperience { edge: key, experience: r.experience });
                }
            }
            let listed = e.active().expect("validated non-empty").experience;
            let bound = graph.active_experience(&key);
            if bound != Some(listed) {
                return Err(SupergraphError::BindingMismatch { edge: key, bound, listed });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("supergraph serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, SupergraphError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let g: Self = serde_path_to_error::deserialize(de).map_err(|e| SupergraphError::Parse(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), SupergraphError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| SupergraphError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| SupergraphError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SupergraphError> {
        let s = std::fs::read_to_string(path).map_err(|e| SupergraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
